//! Room layouts: the five built-in rooms and a TOML layout file format.
//!
//! A layout file looks like
//!
//! ```toml
//! name = "corridor"
//! bounds = [0.0, 0.0, 4.0, 4.0]          # xmin, ymin, xmax, ymax
//! targets = [[3.2, 3.2], [0.8, 3.2]]     # first entry is the single-target goal
//!
//! [spawn]
//! min = [0.5, 0.5]
//! max = [1.0, 1.0]
//! theta = [-3.14159, 3.14159]
//!
//! [[walls]]
//! from = [0.0, 0.0]
//! to = [4.0, 0.0]
//! color = [0.6, 0.6, 0.6]
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::geometry::{point_segment_distance, ray_segment, Rgb, Segment, Vec2};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayoutId {
    Env1,
    Env2,
    Env3,
    Env4,
    Env5,
}

impl LayoutId {
    pub const ALL: [LayoutId; 5] = [
        LayoutId::Env1,
        LayoutId::Env2,
        LayoutId::Env3,
        LayoutId::Env4,
        LayoutId::Env5,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayoutId::Env1 => "env1",
            LayoutId::Env2 => "env2",
            LayoutId::Env3 => "env3",
            LayoutId::Env4 => "env4",
            LayoutId::Env5 => "env5",
        }
    }
}

impl fmt::Display for LayoutId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayoutId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        LayoutId::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown layout `{s}` (expected env1..env5)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpawnRegion {
    pub min: Vec2,
    pub max: Vec2,
    /// Heading range `[lo, hi]` in radians.
    pub theta: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Bounds {
    pub min: Vec2,
    pub max: Vec2,
}

impl From<[f64; 4]> for Bounds {
    fn from([a, b, c, d]: [f64; 4]) -> Self {
        Bounds {
            min: Vec2::new(a, b),
            max: Vec2::new(c, d),
        }
    }
}

impl From<Bounds> for [f64; 4] {
    fn from(b: Bounds) -> Self {
        [b.min.x, b.min.y, b.max.x, b.max.y]
    }
}

impl Bounds {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn diagonal(&self) -> f64 {
        self.min.distance(self.max)
    }
}

/// Room geometry: colored walls, spawn region and candidate targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldMap {
    pub name: String,
    pub bounds: Bounds,
    pub spawn: SpawnRegion,
    pub targets: Vec<Vec2>,
    pub walls: Vec<Segment>,
}

fn rect_walls(x0: f64, y0: f64, x1: f64, y1: f64, colors: [Rgb; 4]) -> Vec<Segment> {
    let (a, b, c, d) = (
        Vec2::new(x0, y0),
        Vec2::new(x1, y0),
        Vec2::new(x1, y1),
        Vec2::new(x0, y1),
    );
    vec![
        Segment::new(a, b, colors[0]),
        Segment::new(b, c, colors[1]),
        Segment::new(c, d, colors[2]),
        Segment::new(d, a, colors[3]),
    ]
}

/// Splits the segment `from → to` into `colors.len()` equal parts.
fn striped(from: Vec2, to: Vec2, colors: &[Rgb]) -> Vec<Segment> {
    let n = colors.len() as f64;
    colors
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let a = from + (to - from) * (k as f64 / n);
            let b = from + (to - from) * ((k + 1) as f64 / n);
            Segment::new(a, b, c)
        })
        .collect()
}

const FULL_TURN: [f64; 2] = [-PI, PI];

impl WorldMap {
    pub fn builtin(id: LayoutId) -> WorldMap {
        let muted = [
            Rgb([0.62, 0.62, 0.66]),
            Rgb([0.74, 0.58, 0.50]),
            Rgb([0.52, 0.68, 0.55]),
            Rgb([0.55, 0.56, 0.76]),
        ];
        let square_spawn = SpawnRegion {
            min: Vec2::new(0.5, 0.5),
            max: Vec2::new(1.0, 1.0),
            theta: FULL_TURN,
        };
        let square_targets = vec![Vec2::new(3.2, 3.2), Vec2::new(0.8, 3.2)];
        let square_bounds = Bounds::from([0.0, 0.0, 4.0, 4.0]);
        match id {
            LayoutId::Env1 => WorldMap {
                name: id.name().into(),
                bounds: square_bounds,
                spawn: square_spawn,
                targets: square_targets,
                walls: rect_walls(0.0, 0.0, 4.0, 4.0, muted),
            },
            LayoutId::Env2 => {
                let c = |r, g, b| Rgb([r, g, b]);
                let mut walls = striped(Vec2::new(0.0, 0.0), Vec2::new(4.0, 0.0), &[c(0.9, 0.1, 0.1), c(0.95, 0.85, 0.1)]);
                walls.extend(striped(Vec2::new(4.0, 0.0), Vec2::new(4.0, 4.0), &[c(0.1, 0.75, 0.2), c(0.1, 0.8, 0.85)]));
                walls.extend(striped(Vec2::new(4.0, 4.0), Vec2::new(0.0, 4.0), &[c(0.15, 0.2, 0.9), c(0.85, 0.15, 0.8)]));
                walls.extend(striped(Vec2::new(0.0, 4.0), Vec2::new(0.0, 0.0), &[c(0.95, 0.55, 0.1), c(0.95, 0.95, 0.95)]));
                WorldMap {
                    name: id.name().into(),
                    bounds: square_bounds,
                    spawn: square_spawn,
                    targets: square_targets,
                    walls,
                }
            }
            LayoutId::Env3 => {
                let mut walls = rect_walls(0.0, 0.0, 4.0, 4.0, muted);
                walls.extend(rect_walls(1.6, 1.6, 2.4, 2.4, [Rgb([0.2, 0.2, 0.22]); 4]));
                WorldMap {
                    name: id.name().into(),
                    bounds: square_bounds,
                    spawn: square_spawn,
                    targets: square_targets,
                    walls,
                }
            }
            LayoutId::Env4 => WorldMap {
                name: id.name().into(),
                bounds: Bounds::from([0.0, 0.0, 5.0, 3.0]),
                spawn: SpawnRegion {
                    min: Vec2::new(0.5, 0.5),
                    max: Vec2::new(1.0, 1.0),
                    theta: FULL_TURN,
                },
                targets: vec![Vec2::new(4.2, 2.3), Vec2::new(4.2, 0.7)],
                walls: rect_walls(
                    0.0,
                    0.0,
                    5.0,
                    3.0,
                    [
                        Rgb([0.80, 0.78, 0.70]),
                        Rgb([0.35, 0.45, 0.70]),
                        Rgb([0.80, 0.78, 0.70]),
                        Rgb([0.70, 0.30, 0.30]),
                    ],
                ),
            },
            LayoutId::Env5 => {
                let (a, b) = (Rgb([0.85, 0.85, 0.85]), Rgb([0.30, 0.30, 0.35]));
                let (c, d) = (Rgb([0.75, 0.55, 0.20]), Rgb([0.25, 0.55, 0.45]));
                let mut walls = striped(Vec2::new(0.0, 0.0), Vec2::new(3.0, 0.0), &[a, b, a]);
                walls.extend(striped(Vec2::new(3.0, 0.0), Vec2::new(3.0, 5.0), &[c, d, c, d, c]));
                walls.extend(striped(Vec2::new(3.0, 5.0), Vec2::new(0.0, 5.0), &[b, a, b]));
                walls.extend(striped(Vec2::new(0.0, 5.0), Vec2::new(0.0, 0.0), &[d, c, d, c, d]));
                WorldMap {
                    name: id.name().into(),
                    bounds: Bounds::from([0.0, 0.0, 3.0, 5.0]),
                    spawn: SpawnRegion {
                        min: Vec2::new(0.5, 0.5),
                        max: Vec2::new(1.0, 1.0),
                        theta: FULL_TURN,
                    },
                    targets: vec![Vec2::new(2.3, 4.2), Vec2::new(0.7, 4.2)],
                    walls,
                }
            }
        }
    }

    pub fn from_toml(text: &str) -> Result<WorldMap> {
        let map: WorldMap = toml::from_str(text).map_err(|e| Error::Format {
            what: "layout file",
            detail: e.to_string(),
        })?;
        map.validate(0.0)?;
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<WorldMap> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("layout serializes")
    }

    /// Clearance from `p` to the nearest wall.
    pub fn clearance(&self, p: Vec2) -> f64 {
        self.walls
            .iter()
            .map(|w| point_segment_distance(p, w.from, w.to))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_free(&self, p: Vec2, radius: f64) -> bool {
        self.bounds.contains(p) && self.clearance(p) >= radius
    }

    /// Checks the structural contract of a layout: non-empty targets, spawn
    /// and targets in free space, and no ray from the spawn centre escaping
    /// the walls.
    pub fn validate(&self, radius: f64) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("layout `{}`: {m}", self.name)));
        if self.walls.is_empty() {
            return bad("no walls".into());
        }
        if self.targets.is_empty() {
            return bad("no targets".into());
        }
        if self.spawn.min.x > self.spawn.max.x
            || self.spawn.min.y > self.spawn.max.y
            || self.spawn.theta[0] > self.spawn.theta[1]
        {
            return bad("inverted spawn region".into());
        }
        let corners = [
            self.spawn.min,
            self.spawn.max,
            Vec2::new(self.spawn.min.x, self.spawn.max.y),
            Vec2::new(self.spawn.max.x, self.spawn.min.y),
        ];
        if corners.iter().any(|c| !self.is_free(*c, radius)) {
            return bad("spawn region intersects walls or leaves bounds".into());
        }
        for t in &self.targets {
            if !self.is_free(*t, radius.max(1e-9)) {
                return bad(format!("target ({}, {}) not in free space", t.x, t.y));
            }
        }
        let centre = (self.spawn.min + self.spawn.max) * 0.5;
        for k in 0..720 {
            let dir = Vec2::from_angle(k as f64 * PI / 360.0);
            if !self.walls.iter().any(|w| ray_segment(centre, dir, w).is_some()) {
                return bad("walls do not enclose the spawn region".into());
            }
        }
        Ok(())
    }

    /// Whether the straight segment between two points is clear by `radius`.
    pub fn line_of_travel_clear(&self, from: Vec2, to: Vec2, radius: f64) -> bool {
        let probe = Segment::new(from, to, Rgb::BLACK);
        !self
            .walls
            .iter()
            .any(|w| super::geometry::segment_distance(probe.from, probe.to, w.from, w.to) < radius)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_validate() {
        for id in LayoutId::ALL {
            WorldMap::builtin(id).validate(0.15).unwrap();
        }
    }

    #[test]
    fn only_env3_blocks_the_direct_route() {
        for id in LayoutId::ALL {
            let map = WorldMap::builtin(id);
            let spawn = (map.spawn.min + map.spawn.max) * 0.5;
            let clear = map.line_of_travel_clear(spawn, map.targets[0], 0.15);
            assert_eq!(clear, id != LayoutId::Env3, "{id}");
        }
    }

    #[test]
    fn layout_ids_parse() {
        assert_eq!("ENV3".parse::<LayoutId>().unwrap(), LayoutId::Env3);
        assert!("env9".parse::<LayoutId>().is_err());
    }

    #[test]
    fn toml_round_trip_and_rejects_open_rooms() {
        let map = WorldMap::builtin(LayoutId::Env2);
        let text = map.to_toml();
        assert_eq!(WorldMap::from_toml(&text).unwrap(), map);

        let mut open = WorldMap::builtin(LayoutId::Env1);
        open.walls.pop();
        assert!(WorldMap::from_toml(&open.to_toml()).is_err());

        assert!(WorldMap::from_toml("name = \"x\"\nbogus = 1").is_err());
    }
}

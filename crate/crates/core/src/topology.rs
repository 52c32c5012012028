//! Unidirectional near-Manhattan grid.
//!
//! Rows and columns alternate direction: even rows run East, odd rows run
//! West, even columns run North and odd columns run South. The input gateway
//! attaches to `(0, 0)` and the ACK gateway to `(W-1, H-1)`; gateway links are
//! not part of the grid and never count as hops.

use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Node position: `x` is the column (0 = west edge), `y` the row (0 = south edge).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Coord {
    pub x: usize,
    pub y: usize,
}

impl Coord {
    pub const fn new(x: usize, y: usize) -> Self {
        Coord { x, y }
    }

    pub fn parity(self) -> ParityClass {
        parity_class(self)
    }
}

impl From<(usize, usize)> for Coord {
    fn from((x, y): (usize, usize)) -> Self {
        Coord { x, y }
    }
}

impl From<Coord> for (usize, usize) {
    fn from(c: Coord) -> Self {
        (c.x, c.y)
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    North,
    South,
    East,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::North,
        Direction::South,
        Direction::East,
        Direction::West,
    ];

    pub fn opposite(self) -> Direction {
        match self {
            Direction::North => Direction::South,
            Direction::South => Direction::North,
            Direction::East => Direction::West,
            Direction::West => Direction::East,
        }
    }

    pub fn is_horizontal(self) -> bool {
        matches!(self, Direction::East | Direction::West)
    }

    pub fn letter(self) -> char {
        match self {
            Direction::North => 'N',
            Direction::South => 'S',
            Direction::East => 'E',
            Direction::West => 'W',
        }
    }
}

/// Parity of `(x, y)`. `OddOdd` nodes can only leave West or South.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParityClass {
    EvenEven,
    OddEven,
    EvenOdd,
    OddOdd,
}

pub fn parity_class(c: Coord) -> ParityClass {
    match (c.x % 2, c.y % 2) {
        (0, 0) => ParityClass::EvenEven,
        (1, 0) => ParityClass::OddEven,
        (0, _) => ParityClass::EvenOdd,
        _ => ParityClass::OddOdd,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub wraparound: bool,
}

impl NetworkConfig {
    pub fn new(width: usize, height: usize) -> Self {
        NetworkConfig {
            width,
            height,
            wraparound: false,
        }
    }

    pub fn with_wraparound(mut self, enabled: bool) -> Self {
        self.wraparound = enabled;
        self
    }

    /// Both sides must be odd and at least 5 so the ACK corner sits on an
    /// eastbound row and a northbound column.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("width", self.width), ("height", self.height)] {
            if v < 5 {
                return Err(Error::Config(format!("{name} {v} is smaller than 5")));
            }
            if v % 2 == 0 {
                return Err(Error::Config(format!("{name} {v} is even")));
            }
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, c: Coord) -> bool {
        c.x < self.width && c.y < self.height
    }
}

/// A directed out-link of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Link {
    pub dir: Direction,
    pub to: Coord,
    pub wraparound: bool,
}

/// Immutable grid; all adjacency is derived from the parity rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    config: NetworkConfig,
}

pub fn build_network(config: NetworkConfig) -> Result<Network> {
    config.validate()?;
    Ok(Network { config })
}

impl Network {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        build_network(config)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    pub fn height(&self) -> usize {
        self.config.height
    }

    pub fn node_count(&self) -> usize {
        self.config.node_count()
    }

    pub fn contains(&self, c: Coord) -> bool {
        self.config.contains(c)
    }

    pub fn input_gw(&self) -> Coord {
        Coord::new(0, 0)
    }

    pub fn ack_gw(&self) -> Coord {
        Coord::new(self.width() - 1, self.height() - 1)
    }

    pub fn check(&self, c: Coord) -> Result<()> {
        if self.contains(c) {
            Ok(())
        } else {
            Err(Error::OutOfBounds(c, self.width(), self.height()))
        }
    }

    /// Row-major scan, south row first.
    pub fn coords(&self) -> impl Iterator<Item = Coord> + '_ {
        let w = self.width();
        (0..self.node_count()).map(move |i| Coord::new(i % w, i / w))
    }

    pub fn index(&self, c: Coord) -> usize {
        c.y * self.width() + c.x
    }

    pub fn horizontal_dir(y: usize) -> Direction {
        if y.is_multiple_of(2) {
            Direction::East
        } else {
            Direction::West
        }
    }

    pub fn vertical_dir(x: usize) -> Direction {
        if x.is_multiple_of(2) {
            Direction::North
        } else {
            Direction::South
        }
    }

    /// The link leaving `c` in direction `dir`, if the parity rules provide
    /// one. Wraparound links are only returned when enabled.
    pub fn link(&self, c: Coord, dir: Direction) -> Option<Link> {
        if !self.contains(c) {
            return None;
        }
        let (w, h) = (self.width(), self.height());
        let wrap = self.config.wraparound;
        let (to, wraparound) = match dir {
            Direction::East if c.y.is_multiple_of(2) => {
                if c.x + 1 < w {
                    (Coord::new(c.x + 1, c.y), false)
                } else {
                    (Coord::new(0, c.y), true)
                }
            }
            Direction::West if c.y % 2 == 1 => {
                if c.x > 0 {
                    (Coord::new(c.x - 1, c.y), false)
                } else {
                    (Coord::new(w - 1, c.y), true)
                }
            }
            Direction::North if c.x.is_multiple_of(2) => {
                if c.y + 1 < h {
                    (Coord::new(c.x, c.y + 1), false)
                } else {
                    (Coord::new(c.x, 0), true)
                }
            }
            Direction::South if c.x % 2 == 1 => {
                if c.y > 0 {
                    (Coord::new(c.x, c.y - 1), false)
                } else {
                    (Coord::new(c.x, h - 1), true)
                }
            }
            _ => return None,
        };
        if wraparound && !wrap {
            return None;
        }
        Some(Link { dir, to, wraparound })
    }

    /// Non-wraparound neighbor in direction `dir`, following the link rules.
    pub fn step(&self, c: Coord, dir: Direction) -> Option<Coord> {
        self.link(c, dir).filter(|l| !l.wraparound).map(|l| l.to)
    }

    pub fn out_links(&self, c: Coord) -> Result<Vec<Link>> {
        self.check(c)?;
        Ok([Network::horizontal_dir(c.y), Network::vertical_dir(c.x)]
            .into_iter()
            .filter_map(|d| self.link(c, d))
            .collect())
    }

    /// All directed links, in scan order.
    pub fn links(&self) -> Vec<(Coord, Link)> {
        self.coords()
            .flat_map(|c| {
                self.out_links(c)
                    .unwrap_or_default()
                    .into_iter()
                    .map(move |l| (c, l))
            })
            .collect()
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph cn {\n  node [shape=point];\n");
        for c in self.coords() {
            let _ = writeln!(out, "  \"{},{}\" [pos=\"{},{}!\"];", c.x, c.y, c.x, c.y);
        }
        for (from, l) in self.links() {
            let style = if l.wraparound { " [style=dashed]" } else { "" };
            let _ = writeln!(
                out,
                "  \"{},{}\" -> \"{},{}\"{};",
                from.x, from.y, l.to.x, l.to.y, style
            );
        }
        out.push_str("}\n");
        out
    }
}

/// Faults may not sit on the periphery, on the line next to the north, west
/// or east periphery, or on the two rows above the south periphery.
pub fn is_forbidden_fault_location(c: Coord, config: &NetworkConfig) -> bool {
    let (w, h) = (config.width, config.height);
    c.x <= 1 || c.x + 2 >= w || c.y <= 2 || c.y + 2 >= h
}

pub fn eligible_fault_locations(config: &NetworkConfig) -> Vec<Coord> {
    (0..config.height)
        .flat_map(|y| (0..config.width).map(move |x| Coord::new(x, y)))
        .filter(|c| !is_forbidden_fault_location(*c, config))
        .collect()
}

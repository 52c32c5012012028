//! Topology-aware XY-YX routing for a fault-free grid.
//!
//! Directives leave the input gateway at `(0, 0)`, run East along row 0 to
//! the turning column and then North. Destinations on odd columns are
//! approached from the column one to the west; destinations on odd rows of odd
//! columns are reached by overshooting one row and dropping South for the
//! final hop. ACKs only ever move East or North.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{Coord, Direction, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PacketKind {
    Directive,
    Ack,
}

/// Hop-by-hop route, source and destination inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Path(Vec<Coord>);

impl Path {
    pub fn new(coords: Vec<Coord>) -> Self {
        Path(coords)
    }

    pub fn single(c: Coord) -> Self {
        Path(vec![c])
    }

    pub fn coords(&self) -> &[Coord] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<Coord> {
        self.0
    }

    pub fn push(&mut self, c: Coord) {
        self.0.push(c);
    }

    /// Number of controller-to-controller hops.
    pub fn hops(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn source(&self) -> Option<Coord> {
        self.0.first().copied()
    }

    pub fn destination(&self) -> Option<Coord> {
        self.0.last().copied()
    }

    /// Corner points: source, every node where the direction changes, and
    /// the destination.
    pub fn waypoints(&self) -> Vec<Coord> {
        let c = &self.0;
        if c.len() <= 2 {
            return c.clone();
        }
        let mut out = vec![c[0]];
        for w in c.windows(3) {
            let d1 = (w[1].x as i64 - w[0].x as i64, w[1].y as i64 - w[0].y as i64);
            let d2 = (w[2].x as i64 - w[1].x as i64, w[2].y as i64 - w[1].y as i64);
            if d1 != d2 {
                out.push(w[1]);
            }
        }
        out.push(*c.last().unwrap());
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("path serialization is infallible")
    }
}

impl From<Vec<Coord>> for Path {
    fn from(v: Vec<Coord>) -> Self {
        Path(v)
    }
}

/// Column on which a directive turns North for destination `dest`.
pub fn turning_column(dest: Coord) -> usize {
    dest.x - dest.x % 2
}

/// One step of the fault-free directive algorithm.
pub fn next_hop_agnostic(current: Coord, dest: Coord, net: &Network) -> Result<Direction> {
    net.check(current)?;
    net.check(dest)?;
    let stuck = Error::NoLegalMove { at: current, dest };
    if current == dest {
        return Err(stuck);
    }
    let tx = turning_column(dest);
    let dir = if current.x < tx {
        Direction::East
    } else if current.x == tx {
        if current.y < dest.y {
            Direction::North
        } else if current.y == dest.y {
            // dest is one column east of the turning column
            if current.y.is_multiple_of(2) {
                Direction::East
            } else {
                Direction::North
            }
        } else if current.y == dest.y + 1 && dest.x == tx + 1 && dest.y % 2 == 1 {
            Direction::East
        } else {
            return Err(stuck);
        }
    } else if current.x == dest.x && current.y == dest.y + 1 && dest.y % 2 == 1 {
        Direction::South
    } else {
        return Err(stuck);
    };
    match net.link(current, dir) {
        Some(l) if !l.wraparound => Ok(dir),
        _ => Err(stuck),
    }
}

/// Hop budget for a fault-free route.
pub fn agnostic_budget(net: &Network) -> usize {
    net.width() + net.height() + 4
}

pub fn route_agnostic(src: Coord, dst: Coord, net: &Network) -> Result<Path> {
    net.check(src)?;
    net.check(dst)?;
    let budget = agnostic_budget(net);
    let mut path = Path::single(src);
    let mut cur = src;
    while cur != dst {
        if path.hops() >= budget {
            return Err(Error::HopBudgetExceeded { dest: dst, budget });
        }
        let d = next_hop_agnostic(cur, dst, net)?;
        cur = net.step(cur, d).ok_or(Error::NoLegalMove { at: cur, dest: dst })?;
        path.push(cur);
    }
    Ok(path)
}

/// Node that originates the ACK for a delivered directive: the node before
/// the destination, so no ACK ever starts on an odd-row, odd-column node.
pub fn ack_origin(data_path: &Path) -> Result<Coord> {
    let c = data_path.coords();
    if c.len() < 2 {
        return Err(Error::DegeneratePath);
    }
    Ok(c[c.len() - 2])
}

/// Like [`ack_origin`], but a destination equal to the injection node
/// originates its own ACK.
pub fn ack_source(data_path: &Path) -> Option<Coord> {
    match ack_origin(data_path) {
        Ok(c) => Some(c),
        Err(_) => data_path.destination(),
    }
}

/// One step of the fault-free ACK algorithm: East along even rows, North at
/// the last column, and a single North hop off odd rows.
pub fn next_hop_ack_agnostic(current: Coord, net: &Network) -> Result<Direction> {
    net.check(current)?;
    let gw = net.ack_gw();
    let stuck = Error::NoLegalMove { at: current, dest: gw };
    if current == gw {
        return Err(stuck);
    }
    let dir = if current.y.is_multiple_of(2) {
        if current.x < gw.x {
            Direction::East
        } else {
            Direction::North
        }
    } else if current.x.is_multiple_of(2) {
        Direction::North
    } else {
        return Err(stuck);
    };
    net.step(current, dir).map(|_| dir).ok_or(stuck)
}

pub fn route_ack_agnostic(src: Coord, net: &Network) -> Result<Path> {
    net.check(src)?;
    let gw = net.ack_gw();
    let budget = agnostic_budget(net);
    let mut path = Path::single(src);
    let mut cur = src;
    while cur != gw {
        if path.hops() >= budget {
            return Err(Error::HopBudgetExceeded { dest: gw, budget });
        }
        let d = next_hop_ack_agnostic(cur, net)?;
        cur = net.step(cur, d).ok_or(Error::NoLegalMove { at: cur, dest: gw })?;
        path.push(cur);
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_network, parity_class, NetworkConfig, ParityClass};
    use std::collections::{HashMap, VecDeque};

    fn net(w: usize, h: usize) -> Network {
        build_network(NetworkConfig::new(w, h)).unwrap()
    }

    fn c(x: usize, y: usize) -> Coord {
        Coord::new(x, y)
    }

    // Independent oracle: BFS distances over the directed healthy graph.
    fn bfs(net: &Network, from: Coord) -> HashMap<Coord, usize> {
        let mut dist = HashMap::from([(from, 0)]);
        let mut q = VecDeque::from([from]);
        while let Some(u) = q.pop_front() {
            let du = dist[&u];
            for l in net.out_links(u).unwrap() {
                if l.wraparound {
                    continue;
                }
                dist.entry(l.to).or_insert_with(|| {
                    q.push_back(l.to);
                    du + 1
                });
            }
        }
        dist
    }

    #[test]
    fn next_hop_examples() {
        let n = net(5, 5);
        assert_eq!(next_hop_agnostic(c(0, 0), c(1, 2), &n), Ok(Direction::North));
        assert_eq!(next_hop_agnostic(c(1, 2), c(1, 1), &n), Ok(Direction::South));
        assert_eq!(next_hop_agnostic(c(0, 0), c(2, 2), &n), Ok(Direction::East));
        assert!(next_hop_agnostic(c(2, 2), c(2, 2), &n).is_err());
    }

    #[test]
    fn published_routes() {
        let n = net(5, 5);
        let p = route_agnostic(c(0, 0), c(1, 2), &n).unwrap();
        assert_eq!(p.waypoints(), vec![c(0, 0), c(0, 2), c(1, 2)]);
        let p = route_agnostic(c(0, 0), c(1, 1), &n).unwrap();
        assert_eq!(p.waypoints(), vec![c(0, 0), c(0, 2), c(1, 2), c(1, 1)]);
        assert_eq!(p.hops(), 4);
        let p = route_agnostic(c(0, 0), c(0, 0), &n).unwrap();
        assert_eq!(p.hops(), 0);
    }

    #[test]
    fn ack_origin_examples() {
        let p = Path::new(vec![c(0, 0), c(0, 1), c(0, 2), c(1, 2), c(1, 1)]);
        assert_eq!(ack_origin(&p), Ok(c(1, 2)));
        assert_eq!(ack_origin(&Path::new(vec![c(0, 0), c(1, 0)])), Ok(c(0, 0)));
        assert_eq!(ack_origin(&Path::single(c(0, 0))), Err(Error::DegeneratePath));
        assert_eq!(ack_source(&Path::single(c(0, 0))), Some(c(0, 0)));
    }

    #[test]
    fn ack_examples() {
        let n = net(5, 5);
        let p = route_ack_agnostic(c(1, 2), &n).unwrap();
        assert_eq!(p.waypoints(), vec![c(1, 2), c(4, 2), c(4, 4)]);
        assert_eq!(route_ack_agnostic(c(4, 4), &n).unwrap().hops(), 0);
        let p = route_ack_agnostic(c(2, 1), &n).unwrap();
        assert_eq!(p.hops(), (4 - 2) + (4 - 1));
        assert!(route_ack_agnostic(c(1, 1), &n).is_err());
    }

    #[test]
    fn json_is_array_of_pairs() {
        let p = Path::new(vec![c(0, 0), c(0, 1)]);
        assert_eq!(p.to_json(), "[[0,0],[0,1]]");
    }

    #[test]
    fn exhaustive_small_to_large_grids() {
        let mut worst_excess = 0usize;
        for w in (5..=25).step_by(2) {
            for h in (5..=25).step_by(4) {
                let n = net(w, h);
                let dist = bfs(&n, n.input_gw());
                for dst in n.coords() {
                    let p = route_agnostic(n.input_gw(), dst, &n).unwrap();
                    assert!(p.hops() <= agnostic_budget(&n));
                    let mut seen = std::collections::HashSet::new();
                    for win in p.coords().windows(2) {
                        assert!(n
                            .out_links(win[0])
                            .unwrap()
                            .iter()
                            .any(|l| l.to == win[1] && !l.wraparound));
                    }
                    for &x in p.coords() {
                        assert!(seen.insert(x), "repeat in path to {dst}");
                    }
                    worst_excess = worst_excess.max(p.hops() - dist[&dst]);
                    if let Ok(o) = ack_origin(&p) {
                        assert_ne!(parity_class(o), ParityClass::OddOdd);
                        let ack = route_ack_agnostic(o, &n).unwrap();
                        for win in ack.coords().windows(2) {
                            assert!(win[1].x >= win[0].x && win[1].y >= win[0].y);
                        }
                        let gw = n.ack_gw();
                        assert_eq!(ack.hops(), (gw.x - o.x) + (gw.y - o.y));
                    }
                }
            }
        }
        // frozen from the BFS oracle: the agnostic routes are shortest paths
        assert_eq!(worst_excess, 0);
    }
}

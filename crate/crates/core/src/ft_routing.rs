//! South-last fault-tolerant routing.
//!
//! South is only ever taken as the final hop into an odd-row, odd-column
//! destination. Away from faulty blocks packets follow the XY-YX rules.
//! Blocks are rounded clockwise:
//!
//! * a directive meets a block from the south, runs West along the
//!   westbound southern line, climbs the northbound western line and rejoins
//!   XY-YX at the north-west corner;
//! * an ACK meets a block from the west, climbs the northbound western line
//!   and rejoins its East/North walk at the north-west corner.
//!
//! Decisions only use the block descriptors stored at the current boundary
//! node plus a two-bit mode carried in the packet header.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faults::{FaultConfiguration, FaultyBlock, NodeClass};
use crate::routing::{next_hop_ack_agnostic, next_hop_agnostic, PacketKind, Path};
use crate::topology::{parity_class, Coord, Direction, Link, Network, ParityClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RoutingMode {
    Normal,
    AbnormalWest,
    AbnormalNorth,
}

impl RoutingMode {
    pub const ALL: [RoutingMode; 3] = [
        RoutingMode::Normal,
        RoutingMode::AbnormalWest,
        RoutingMode::AbnormalNorth,
    ];
}

/// Which rule produced a routing decision; recorded in traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleFired {
    XyYx,
    AckXy,
    SouthLineWest,
    SouthLineStepNorth,
    SouthLineHazard,
    WestCornerClimb,
    RunWest,
    Climb,
    AckWestClimb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub dir: Direction,
    pub mode: RoutingMode,
    pub rule: RuleFired,
}

/// A turn is `incoming -> outgoing` at node `at`, where directions are the
/// directions of travel.
pub fn is_turn_allowed(incoming: Direction, outgoing: Direction, at: Coord, dest: Coord) -> bool {
    use Direction::*;
    if outgoing == incoming.opposite() {
        return false;
    }
    match (incoming, outgoing) {
        (West, South) | (South, West) | (South, East) => false,
        (East, South) => {
            at.x == dest.x
                && at.y == dest.y + 1
                && parity_class(dest) == ParityClass::OddOdd
        }
        _ => true,
    }
}

/// Hop budget for any route in `cfg`.
pub fn hop_budget(net: &Network, cfg: &FaultConfiguration) -> usize {
    net.width()
        + net.height()
        + 4
        + cfg
            .blocks
            .iter()
            .map(|b| 2 * (b.core.width() + b.core.height()) + 8)
            .sum::<usize>()
}

fn south_side_block(cfg: &FaultConfiguration, at: Coord) -> Option<&FaultyBlock> {
    cfg.frame_blocks(at)
        .find(|b| b.in_south_lines(at) && b.core_cols().contains(&at.x))
}

/// At an even row of a western line the climb may stop once the packet is
/// level with or above the northern lines of every block it runs beside.
fn climb_may_exit(cfg: &FaultConfiguration, at: Coord) -> bool {
    at.y.is_multiple_of(2)
        && cfg
            .frame_blocks(at)
            .filter(|b| b.in_west_lines(at))
            .all(|b| at.y > b.core.y1)
}

fn directive_normal(
    cur: Coord,
    dest: Coord,
    cfg: &FaultConfiguration,
    net: &Network,
) -> Result<Decision> {
    let dir = next_hop_agnostic(cur, dest, net)?;
    if dir == Direction::North {
        if let Some(b) = south_side_block(cfg, cur) {
            let decision = if cur.y % 2 == 1 {
                Decision {
                    dir: Direction::West,
                    mode: RoutingMode::AbnormalWest,
                    rule: RuleFired::SouthLineWest,
                }
            } else if cur.y + 2 == b.core.y0 {
                Decision {
                    dir: Direction::North,
                    mode: RoutingMode::Normal,
                    rule: RuleFired::SouthLineStepNorth,
                }
            } else {
                // eastbound inner line: the westbound line is behind us
                Decision {
                    dir: Direction::South,
                    mode: RoutingMode::AbnormalWest,
                    rule: RuleFired::SouthLineHazard,
                }
            };
            return Ok(decision);
        }
    }
    Ok(Decision {
        dir,
        mode: RoutingMode::Normal,
        rule: RuleFired::XyYx,
    })
}

fn ack_normal(cur: Coord, cfg: &FaultConfiguration, net: &Network) -> Result<Decision> {
    let dir = next_hop_ack_agnostic(cur, net)?;
    if dir == Direction::East && cur.x.is_multiple_of(2) {
        let facing = cfg
            .frame_blocks(cur)
            .any(|b| b.in_west_lines(cur) && b.core_rows().contains(&cur.y));
        if facing {
            return Ok(Decision {
                dir: Direction::North,
                mode: RoutingMode::AbnormalNorth,
                rule: RuleFired::AckWestClimb,
            });
        }
    }
    Ok(Decision {
        dir,
        mode: RoutingMode::Normal,
        rule: RuleFired::AckXy,
    })
}

/// Chooses the outgoing direction and next header mode at `current`.
///
/// Errors when the chosen hop would enter a block core from an unexpected
/// side, or when the only way forward is a prohibited turn.
#[allow(clippy::too_many_arguments)]
pub fn next_hop_ft(
    current: Coord,
    incoming: Option<Direction>,
    dest: Coord,
    mode: RoutingMode,
    cfg: &FaultConfiguration,
    net: &Network,
    kind: PacketKind,
) -> Result<Decision> {
    net.check(current)?;
    net.check(dest)?;
    let decision = match (kind, mode) {
        (PacketKind::Directive, RoutingMode::Normal) => directive_normal(current, dest, cfg, net)?,
        (PacketKind::Ack, RoutingMode::Normal) => ack_normal(current, cfg, net)?,
        (PacketKind::Directive, RoutingMode::AbnormalWest) => {
            let corner = current.x.is_multiple_of(2)
                && cfg.frame_blocks(current).any(|b| {
                    b.in_west_lines(current) && b.south_rows().contains(&current.y)
                });
            if corner {
                Decision {
                    dir: Direction::North,
                    mode: RoutingMode::AbnormalNorth,
                    rule: RuleFired::WestCornerClimb,
                }
            } else {
                Decision {
                    dir: Direction::West,
                    mode: RoutingMode::AbnormalWest,
                    rule: RuleFired::RunWest,
                }
            }
        }
        (PacketKind::Ack, RoutingMode::AbnormalWest) => {
            return Err(Error::UnexpectedApproach {
                at: current,
                heading: Direction::West,
            })
        }
        (_, RoutingMode::AbnormalNorth) => {
            if climb_may_exit(cfg, current) {
                match kind {
                    PacketKind::Directive => directive_normal(current, dest, cfg, net)?,
                    PacketKind::Ack => ack_normal(current, cfg, net)?,
                }
            } else {
                Decision {
                    dir: Direction::North,
                    mode: RoutingMode::AbnormalNorth,
                    rule: RuleFired::Climb,
                }
            }
        }
    };

    if let Some(inc) = incoming {
        if !is_turn_allowed(inc, decision.dir, current, dest) {
            return Err(Error::IllegalTurn {
                at: current,
                incoming: inc,
                outgoing: decision.dir,
                dest,
            });
        }
    }
    let next = match net.link(current, decision.dir) {
        Some(l) if !l.wraparound => l.to,
        _ => return Err(Error::NoLegalMove { at: current, dest }),
    };
    if cfg.class(next).is_blocked() {
        return Err(Error::UnexpectedApproach {
            at: current,
            heading: decision.dir,
        });
    }
    Ok(decision)
}

/// One hop of a traced route.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub coord: Coord,
    pub mode: RoutingMode,
    pub turn: Option<String>,
    pub rule: Option<RuleFired>,
}

fn check_endpoints(
    src: Coord,
    dst: Coord,
    cfg: &FaultConfiguration,
    net: &Network,
    kind: PacketKind,
) -> Result<()> {
    net.check(src)?;
    net.check(dst)?;
    if cfg.class(src).is_blocked() {
        return Err(Error::Unreachable(src));
    }
    match kind {
        PacketKind::Directive if cfg.class(dst) != NodeClass::Safe => Err(Error::Unreachable(dst)),
        PacketKind::Ack if dst != net.ack_gw() => Err(Error::Unreachable(dst)),
        _ => Ok(()),
    }
}

/// Drives [`next_hop_ft`] from `src` to `dst`, calling `on_hop` before each
/// hop with the node, the header mode on arrival, the incoming direction and
/// the decision taken. Returns the path and the mode on arrival at each node.
fn walk<F>(
    src: Coord,
    dst: Coord,
    cfg: &FaultConfiguration,
    net: &Network,
    kind: PacketKind,
    mut on_hop: F,
) -> Result<(Path, Vec<RoutingMode>)>
where
    F: FnMut(usize, Coord, RoutingMode, Option<Direction>, &Decision),
{
    check_endpoints(src, dst, cfg, net, kind)?;
    let budget = hop_budget(net, cfg);
    let mut path = Path::single(src);
    let mut modes = vec![RoutingMode::Normal];
    let mut cur = src;
    let mut incoming = None;
    let mut mode = RoutingMode::Normal;
    while cur != dst {
        if path.hops() >= budget {
            return Err(Error::HopBudgetExceeded { dest: dst, budget });
        }
        let d = next_hop_ft(cur, incoming, dst, mode, cfg, net, kind)?;
        on_hop(path.hops(), cur, mode, incoming, &d);
        cur = net.step(cur, d.dir).expect("validated by next_hop_ft");
        incoming = Some(d.dir);
        mode = d.mode;
        path.push(cur);
        modes.push(mode);
    }
    Ok((path, modes))
}

/// Routes one packet and reports the header mode on arrival at each node.
pub fn route_ft_with_modes(
    src: Coord,
    dst: Coord,
    cfg: &FaultConfiguration,
    net: &Network,
    kind: PacketKind,
) -> Result<(Path, Vec<RoutingMode>)> {
    walk(src, dst, cfg, net, kind, |_, _, _, _, _| {})
}

/// Routes one packet, returning the path and a per-hop trace.
pub fn route_ft_traced(
    src: Coord,
    dst: Coord,
    cfg: &FaultConfiguration,
    net: &Network,
    kind: PacketKind,
) -> Result<(Path, Vec<TraceRecord>)> {
    let mut trace = Vec::new();
    let (path, modes) = walk(src, dst, cfg, net, kind, |step, coord, mode, incoming, d| {
        let turn = match incoming {
            Some(i) if i != d.dir => Some(format!("{}{}", i.letter(), d.dir.letter())),
            _ => None,
        };
        trace.push(TraceRecord {
            step,
            coord,
            mode,
            turn,
            rule: Some(d.rule),
        });
    })?;
    trace.push(TraceRecord {
        step: path.hops(),
        coord: dst,
        mode: *modes.last().unwrap(),
        turn: None,
        rule: None,
    });
    Ok((path, trace))
}

pub fn route_ft(
    src: Coord,
    dst: Coord,
    cfg: &FaultConfiguration,
    net: &Network,
    kind: PacketKind,
) -> Result<Path> {
    route_ft_with_modes(src, dst, cfg, net, kind).map(|(p, _)| p)
}

/// The link joining two consecutive path nodes.
pub fn link_between(net: &Network, a: Coord, b: Coord) -> Option<Link> {
    Direction::ALL
        .into_iter()
        .filter_map(|d| net.link(a, d))
        .find(|l| l.to == b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub at: Coord,
    pub incoming: Direction,
    pub outgoing: Direction,
}

/// Every direction change along `path`. Fails if two consecutive nodes are
/// not joined by a link.
pub fn path_turns(path: &Path, net: &Network) -> Result<Vec<Turn>> {
    let mut dirs = Vec::with_capacity(path.hops());
    for w in path.coords().windows(2) {
        let l = link_between(net, w[0], w[1]).ok_or(Error::NoLegalMove {
            at: w[0],
            dest: w[1],
        })?;
        dirs.push(l.dir);
    }
    Ok(path
        .coords()
        .iter()
        .skip(1)
        .zip(dirs.windows(2))
        .filter(|(_, d)| d[0] != d[1])
        .map(|(&at, d)| Turn {
            at,
            incoming: d[0],
            outgoing: d[1],
        })
        .collect())
}

/// Turns along `path` that the south-last model prohibits, plus any use of a
/// wraparound link (reported as a turn at the link's tail).
pub fn turn_violations(path: &Path, net: &Network) -> Vec<Turn> {
    let Some(dest) = path.destination() else {
        return Vec::new();
    };
    let mut bad = Vec::new();
    for w in path.coords().windows(2) {
        match link_between(net, w[0], w[1]) {
            Some(l) if l.wraparound => bad.push(Turn {
                at: w[0],
                incoming: l.dir,
                outgoing: l.dir,
            }),
            None => bad.push(Turn {
                at: w[0],
                incoming: Direction::North,
                outgoing: Direction::South,
            }),
            _ => {}
        }
    }
    if let Ok(turns) = path_turns(path, net) {
        bad.extend(
            turns
                .into_iter()
                .filter(|t| !is_turn_allowed(t.incoming, t.outgoing, t.at, dest)),
        );
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faults::{FaultSet, Rect};
    use crate::routing::route_agnostic;
    use crate::topology::{build_network, NetworkConfig};
    use std::collections::{HashSet, VecDeque};

    fn c(x: usize, y: usize) -> Coord {
        Coord::new(x, y)
    }

    fn net(w: usize, h: usize) -> Network {
        build_network(NetworkConfig::new(w, h)).unwrap()
    }

    fn config(n: &Network, faults: &[(usize, usize)]) -> FaultConfiguration {
        let f = FaultSet::from_coords(faults.iter().map(|&(x, y)| c(x, y)));
        FaultConfiguration::build(n, &f, true).unwrap()
    }

    #[test]
    fn turn_rules() {
        use Direction::*;
        assert!(!is_turn_allowed(East, South, c(2, 2), c(5, 5)));
        assert!(is_turn_allowed(East, South, c(1, 2), c(1, 1)));
        assert!(is_turn_allowed(North, East, c(2, 2), c(5, 5)));
        assert!(is_turn_allowed(North, West, c(2, 3), c(5, 5)));
        assert!(is_turn_allowed(West, North, c(2, 3), c(5, 5)));
        assert!(!is_turn_allowed(West, South, c(3, 3), c(3, 2)));
        assert!(!is_turn_allowed(South, West, c(3, 2), c(0, 0)));
        assert!(!is_turn_allowed(South, East, c(3, 2), c(9, 2)));
        // final south hop into an even-row node is not exempt
        assert!(!is_turn_allowed(East, South, c(1, 3), c(1, 2)));
        for d in Direction::ALL {
            assert!(!is_turn_allowed(d, d.opposite(), c(2, 2), c(4, 4)));
        }
    }

    #[test]
    fn fault_free_matches_agnostic() {
        let n = net(11, 9);
        let cfg = FaultConfiguration::fault_free(&n);
        for dst in n.coords() {
            let a = route_agnostic(n.input_gw(), dst, &n).unwrap();
            let b = route_ft(n.input_gw(), dst, &cfg, &n, PacketKind::Directive).unwrap();
            assert_eq!(a, b);
        }
        for src in n.coords().filter(|c| c.parity() != ParityClass::OddOdd) {
            let a = crate::routing::route_ack_agnostic(src, &n).unwrap();
            let b = route_ft(src, n.ack_gw(), &cfg, &n, PacketKind::Ack).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn next_hop_without_blocks_delegates() {
        let n = net(9, 9);
        let cfg = FaultConfiguration::fault_free(&n);
        for cur in n.coords() {
            for dst in n.coords() {
                if let Ok(d) = next_hop_agnostic(cur, dst, &n) {
                    let ft = next_hop_ft(cur, None, dst, RoutingMode::Normal, &cfg, &n, PacketKind::Directive)
                        .unwrap();
                    assert_eq!(ft.dir, d);
                    assert_eq!(ft.mode, RoutingMode::Normal);
                }
            }
        }
    }

    /// Faults reproducing the two-block walk-through: a single fault at (2,3)
    /// and a second block whose west lines meet row 6 at column 6.
    pub(crate) fn walkthrough_faults() -> Vec<(usize, usize)> {
        vec![(2, 3), (8, 6)]
    }

    #[test]
    fn walkthrough_directive_and_ack() {
        let n = net(15, 15);
        let cfg = config(&n, &walkthrough_faults());
        let (p, trace) =
            route_ft_traced(n.input_gw(), c(3, 6), &cfg, &n, PacketKind::Directive).unwrap();
        let wp = p.waypoints();
        assert_eq!(
            wp,
            vec![c(0, 0), c(2, 0), c(2, 1), c(0, 1), c(0, 4), c(2, 4), c(2, 6), c(3, 6)]
        );
        let at = |x, y| trace.iter().find(|r| r.coord == c(x, y)).unwrap();
        assert_eq!(at(2, 0).turn.as_deref(), Some("EN"));
        assert_eq!(at(2, 1).turn.as_deref(), Some("NW"));
        assert_eq!(at(2, 4).turn.as_deref(), Some("EN"));
        let origin = crate::routing::ack_origin(&p).unwrap();
        assert_eq!(origin, c(2, 6));
        let (ack, trace) = route_ft_traced(origin, n.ack_gw(), &cfg, &n, PacketKind::Ack).unwrap();
        let r = trace.iter().find(|r| r.coord == c(6, 6)).unwrap();
        assert_eq!(r.turn.as_deref(), Some("EN"));
        assert_eq!(r.rule, Some(RuleFired::AckWestClimb));
        assert!(turn_violations(&ack, &n).is_empty());
        assert!(turn_violations(&p, &n).is_empty());
    }

    #[test]
    fn south_meeting_turns_west() {
        let n = net(15, 15);
        let cfg = config(&n, &walkthrough_faults());
        let d = next_hop_ft(
            c(2, 1),
            Some(Direction::North),
            c(3, 6),
            RoutingMode::Normal,
            &cfg,
            &n,
            PacketKind::Directive,
        )
        .unwrap();
        assert_eq!(d.dir, Direction::West);
        assert_eq!(d.mode, RoutingMode::AbnormalWest);
    }

    #[test]
    fn unreachable_destinations_rejected() {
        let n = net(15, 15);
        let cfg = config(&n, &walkthrough_faults());
        for bad in [c(2, 3), c(1, 3), c(4, 5)] {
            assert_eq!(
                route_ft(n.input_gw(), bad, &cfg, &n, PacketKind::Directive),
                Err(Error::Unreachable(bad))
            );
        }
    }

    fn bfs_healthy(n: &Network, cfg: &FaultConfiguration) -> HashSet<Coord> {
        let mut seen = HashSet::from([n.input_gw()]);
        let mut q = VecDeque::from([n.input_gw()]);
        while let Some(u) = q.pop_front() {
            for l in n.out_links(u).unwrap() {
                if !l.wraparound && !cfg.class(l.to).is_blocked() && seen.insert(l.to) {
                    q.push_back(l.to);
                }
            }
        }
        seen
    }

    #[test]
    fn single_block_sweep_on_15x15() {
        let n = net(15, 15);
        for core in [
            Rect::new(5, 5, 7, 6),
            Rect::new(2, 3, 4, 4),
            Rect::new(6, 8, 12, 12),
            Rect::new(3, 7, 3, 12),
        ] {
            let f = FaultSet::from_coords(core.coords().collect::<Vec<_>>());
            let cfg = FaultConfiguration::build(&n, &f, true).unwrap();
            assert_eq!(cfg.blocks.len(), 1);
            let reach = bfs_healthy(&n, &cfg);
            let budget = hop_budget(&n, &cfg);
            for dst in cfg.deliverable().collect::<Vec<_>>() {
                assert!(reach.contains(&dst));
                let p = route_ft(n.input_gw(), dst, &cfg, &n, PacketKind::Directive).unwrap();
                assert!(p.hops() <= budget);
                assert!(p.coords().iter().all(|&x| !cfg.class(x).is_blocked()));
                assert!(turn_violations(&p, &n).is_empty(), "{dst}: {p:?}");
                if let Ok(o) = crate::routing::ack_origin(&p) {
                    let a = route_ft(o, n.ack_gw(), &cfg, &n, PacketKind::Ack).unwrap();
                    assert!(turn_violations(&a, &n).is_empty());
                }
            }
        }
    }

    #[test]
    fn staggered_overlap_without_merge_breaks_turn_rules() {
        let n = net(25, 25);
        let rects = [Rect::new(10, 5, 14, 6), Rect::new(12, 9, 18, 10)];
        let f = FaultSet::from_coords(rects.iter().flat_map(|r| r.coords().collect::<Vec<_>>()));
        let raw = FaultConfiguration::build(&n, &f, false).unwrap();
        let err = route_ft(n.input_gw(), c(14, 14), &raw, &n, PacketKind::Directive).unwrap_err();
        assert!(
            matches!(err, Error::IllegalTurn { outgoing: Direction::South, .. }),
            "{err:?}"
        );
        let merged = FaultConfiguration::build(&n, &f, true).unwrap();
        let p = route_ft(n.input_gw(), c(14, 14), &merged, &n, PacketKind::Directive).unwrap();
        assert!(turn_violations(&p, &n).is_empty());
    }

    #[test]
    fn identical_stack_climbs_past_both() {
        let n = net(25, 25);
        let rects = [Rect::new(10, 5, 12, 6), Rect::new(10, 9, 12, 10)];
        let f = FaultSet::from_coords(rects.iter().flat_map(|r| r.coords().collect::<Vec<_>>()));
        let cfg = FaultConfiguration::build(&n, &f, true).unwrap();
        assert_eq!(cfg.blocks.len(), 2);
        let p = route_ft(n.input_gw(), c(12, 14), &cfg, &n, PacketKind::Directive).unwrap();
        assert!(p.coords().contains(&c(8, 12)));
        assert!(turn_violations(&p, &n).is_empty());
    }

    #[test]
    fn wraparound_use_is_a_violation() {
        let n = build_network(NetworkConfig::new(5, 5).with_wraparound(true)).unwrap();
        let p = Path::new(vec![c(3, 0), c(4, 0), c(0, 0)]);
        assert_eq!(turn_violations(&p, &n).len(), 1);
    }
}

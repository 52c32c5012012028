//! Per-configuration checks: channel-dependency-graph acyclicity, bounded
//! termination, turn legality, core avoidance and delivery against a
//! reachability oracle.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::faults::{FaultConfiguration, FaultSet, NodeClass};
use crate::ft_routing::{hop_budget, link_between, route_ft_with_modes, turn_violations, RoutingMode, Turn};
use crate::routing::{ack_source, PacketKind, Path};
use crate::topology::{parity_class, Coord, Network, ParityClass};

/// A directed link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Channel {
    pub from: Coord,
    pub to: Coord,
    pub wraparound: bool,
}

/// Packet context that induced a dependency edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EdgeLabel {
    pub dest: Coord,
    pub kind: PacketKind,
    pub mode: RoutingMode,
}

#[derive(Debug, Clone, Default)]
pub struct ChannelDependencyGraph {
    pub vertices: Vec<Channel>,
    index: HashMap<Channel, usize>,
    edges: HashMap<(usize, usize), EdgeLabel>,
}

impl ChannelDependencyGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_vertex(&mut self, ch: Channel) -> usize {
        if let Some(&i) = self.index.get(&ch) {
            return i;
        }
        self.vertices.push(ch);
        self.index.insert(ch, self.vertices.len() - 1);
        self.vertices.len() - 1
    }

    /// Adds `a -> b`; the first label seen for an edge is kept.
    pub fn add_edge(&mut self, a: Channel, b: Channel, label: EdgeLabel) {
        debug_assert_eq!(a.to, b.from);
        let (i, j) = (self.add_vertex(a), self.add_vertex(b));
        self.edges.entry((i, j)).or_insert(label);
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (Channel, Channel, EdgeLabel)> + '_ {
        self.edges
            .iter()
            .map(|(&(i, j), &l)| (self.vertices[i], self.vertices[j], l))
    }

    pub fn label(&self, a: &Channel, b: &Channel) -> Option<EdgeLabel> {
        let i = *self.index.get(a)?;
        let j = *self.index.get(b)?;
        self.edges.get(&(i, j)).copied()
    }

    pub fn to_dot(&self) -> String {
        let name = |c: &Channel| format!("{},{}>{},{}", c.from.x, c.from.y, c.to.x, c.to.y);
        let mut out = String::from("digraph cdg {\n");
        let mut edges: Vec<_> = self.edges().collect();
        edges.sort_by_key(|(a, b, _)| (*a, *b));
        for (a, b, l) in edges {
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\" [label=\"{:?} {} {:?}\"];",
                name(&a),
                name(&b),
                l.kind,
                l.dest,
                l.mode
            );
        }
        out.push_str("}\n");
        out
    }
}

/// One explicit cycle of channels, if the graph has any.
pub fn has_cycle(g: &ChannelDependencyGraph) -> Option<Vec<Channel>> {
    let n = g.vertices.len();
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in g.edges.keys() {
        adj[i].push(j);
    }
    for a in &mut adj {
        a.sort_unstable();
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; n];
    let mut parent = vec![usize::MAX; n];
    for root in 0..n {
        if state[root] != 0 {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        state[root] = 1;
        while let Some(&mut (u, ref mut next)) = stack.last_mut() {
            if *next < adj[u].len() {
                let v = adj[u][*next];
                *next += 1;
                match state[v] {
                    0 => {
                        state[v] = 1;
                        parent[v] = u;
                        stack.push((v, 0));
                    }
                    1 => {
                        let mut cycle = vec![g.vertices[v]];
                        let mut w = u;
                        while w != v {
                            cycle.push(g.vertices[w]);
                            w = parent[w];
                        }
                        cycle[1..].reverse();
                        return Some(cycle);
                    }
                    _ => {}
                }
            } else {
                state[u] = 2;
                stack.pop();
            }
        }
    }
    None
}

/// Healthy nodes reachable from the input gateway over non-wraparound links
/// that avoid block cores.
pub fn brute_force_reachable(net: &Network, cfg: &FaultConfiguration) -> BTreeSet<Coord> {
    let start = net.input_gw();
    let mut seen = BTreeSet::new();
    if cfg.class(start).is_blocked() {
        return seen;
    }
    seen.insert(start);
    let mut q = VecDeque::from([start]);
    while let Some(u) = q.pop_front() {
        for l in net.out_links(u).expect("in bounds") {
            if !l.wraparound && !cfg.class(l.to).is_blocked() && seen.insert(l.to) {
                q.push_back(l.to);
            }
        }
    }
    seen
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteFailure {
    pub kind: PacketKind,
    pub src: Coord,
    pub dst: Coord,
    pub error: String,
    /// Set when the failure was a prohibited turn.
    pub turn: Option<Turn>,
}

impl RouteFailure {
    fn new(kind: PacketKind, src: Coord, dst: Coord, e: Error) -> Self {
        let turn = match e {
            Error::IllegalTurn {
                at,
                incoming,
                outgoing,
                ..
            } => Some(Turn {
                at,
                incoming,
                outgoing,
            }),
            _ => None,
        };
        RouteFailure {
            kind,
            src,
            dst,
            error: e.to_string(),
            turn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnViolation {
    pub kind: PacketKind,
    pub src: Coord,
    pub dst: Coord,
    pub turn: Turn,
}

/// Every route the routing function produces for one configuration.
#[derive(Debug, Clone, Default)]
pub struct RouteSweep {
    pub directives: Vec<(Coord, Path, Vec<RoutingMode>)>,
    pub acks: Vec<(Coord, Path, Vec<RoutingMode>)>,
    pub failures: Vec<RouteFailure>,
}

/// Routes a directive to every deliverable node, and an ACK from every ACK
/// origin of those routes and from every safe node that may originate one.
pub fn sweep_routes(net: &Network, cfg: &FaultConfiguration) -> RouteSweep {
    let mut sweep = RouteSweep::default();
    let mut ack_sources = BTreeSet::new();
    for dst in cfg.deliverable() {
        match route_ft_with_modes(net.input_gw(), dst, cfg, net, PacketKind::Directive) {
            Ok((p, m)) => {
                if let Some(o) = ack_source(&p) {
                    ack_sources.insert(o);
                }
                sweep.directives.push((dst, p, m));
            }
            Err(e) => sweep
                .failures
                .push(RouteFailure::new(PacketKind::Directive, net.input_gw(), dst, e)),
        }
        if parity_class(dst) != ParityClass::OddOdd {
            ack_sources.insert(dst);
        }
    }
    for src in ack_sources {
        match route_ft_with_modes(src, net.ack_gw(), cfg, net, PacketKind::Ack) {
            Ok((p, m)) => sweep.acks.push((src, p, m)),
            Err(e) => sweep
                .failures
                .push(RouteFailure::new(PacketKind::Ack, src, net.ack_gw(), e)),
        }
    }
    sweep
}

fn channel(net: &Network, a: Coord, b: Coord) -> Channel {
    let wraparound = link_between(net, a, b).is_some_and(|l| l.wraparound);
    Channel {
        from: a,
        to: b,
        wraparound,
    }
}

fn cdg_from_sweep(net: &Network, cfg: &FaultConfiguration, sweep: &RouteSweep) -> ChannelDependencyGraph {
    let mut g = ChannelDependencyGraph::new();
    for (from, l) in net.links() {
        if !l.wraparound && !cfg.class(from).is_blocked() && !cfg.class(l.to).is_blocked() {
            g.add_vertex(Channel {
                from,
                to: l.to,
                wraparound: false,
            });
        }
    }
    let routes = sweep
        .directives
        .iter()
        .map(|r| (PacketKind::Directive, r))
        .chain(sweep.acks.iter().map(|r| (PacketKind::Ack, r)));
    for (kind, (_, path, modes)) in routes {
        let c = path.coords();
        let dest = *c.last().unwrap();
        for i in 0..c.len().saturating_sub(2) {
            let a = channel(net, c[i], c[i + 1]);
            let b = channel(net, c[i + 1], c[i + 2]);
            g.add_edge(
                a,
                b,
                EdgeLabel {
                    dest,
                    kind,
                    mode: modes[i + 1],
                },
            );
        }
    }
    g
}

/// Dependency graph induced by the deterministic routing function: one
/// vertex per healthy link, an edge wherever some packet holds one link and
/// requests the next.
pub fn build_cdg(net: &Network, cfg: &FaultConfiguration) -> ChannelDependencyGraph {
    cdg_from_sweep(net, cfg, &sweep_routes(net, cfg))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub width: usize,
    pub height: usize,
    /// Set when the fault set could not be turned into a legal configuration.
    pub config_error: Option<String>,
    pub blocks: usize,
    pub deliverable: usize,
    pub delivered: usize,
    pub acks_delivered: usize,
    pub hop_budget: usize,
    pub max_hops: usize,
    pub budget_violations: Vec<Coord>,
    pub turn_violations: Vec<TurnViolation>,
    pub core_entries: Vec<Coord>,
    pub routing_errors: Vec<RouteFailure>,
    /// Deliverable nodes the routing function failed to reach.
    pub undelivered: Vec<Coord>,
    /// Delivered nodes outside the reachability oracle.
    pub outside_oracle: Vec<Coord>,
    /// Healthy nodes (safe or boundary) the oracle cannot reach.
    pub unreachable_healthy: Vec<Coord>,
    pub cdg_vertices: usize,
    pub cdg_edges: usize,
    pub cdg_cycle: Option<Vec<Channel>>,
}

impl Report {
    pub fn is_clean(&self) -> bool {
        self.config_error.is_none()
            && self.budget_violations.is_empty()
            && self.turn_violations.is_empty()
            && self.core_entries.is_empty()
            && self.routing_errors.is_empty()
            && self.undelivered.is_empty()
            && self.outside_oracle.is_empty()
            && self.cdg_cycle.is_none()
    }

    pub fn violation_count(&self) -> usize {
        usize::from(self.config_error.is_some())
            + self.budget_violations.len()
            + self.turn_violations.len()
            + self.core_entries.len()
            + self.routing_errors.len()
            + self.undelivered.len()
            + self.outside_oracle.len()
            + usize::from(self.cdg_cycle.is_some())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }
}

/// Full check of one configuration. Violations are reported as data.
pub fn verify_all_routes(net: &Network, cfg: &FaultConfiguration) -> Report {
    let sweep = sweep_routes(net, cfg);
    let oracle = brute_force_reachable(net, cfg);
    let budget = hop_budget(net, cfg);
    let mut r = Report {
        width: net.width(),
        height: net.height(),
        blocks: cfg.blocks.len(),
        hop_budget: budget,
        ..Default::default()
    };

    let deliverable: BTreeSet<Coord> = cfg.deliverable().collect();
    r.deliverable = deliverable.len();
    let mut delivered = BTreeSet::new();

    let routes = sweep
        .directives
        .iter()
        .map(|r| (PacketKind::Directive, r))
        .chain(sweep.acks.iter().map(|r| (PacketKind::Ack, r)));
    for (kind, (key, path, _)) in routes {
        let src = path.source().unwrap();
        let dst = path.destination().unwrap();
        r.max_hops = r.max_hops.max(path.hops());
        if path.hops() > budget {
            r.budget_violations.push(*key);
        }
        for t in turn_violations(path, net) {
            r.turn_violations.push(TurnViolation { kind, src, dst, turn: t });
        }
        if path.coords().iter().any(|&c| cfg.class(c).is_blocked()) {
            r.core_entries.push(*key);
        }
        match kind {
            PacketKind::Directive => {
                delivered.insert(dst);
            }
            PacketKind::Ack => r.acks_delivered += 1,
        }
    }
    for f in &sweep.failures {
        if let Some(turn) = f.turn {
            r.turn_violations.push(TurnViolation {
                kind: f.kind,
                src: f.src,
                dst: f.dst,
                turn,
            });
        }
    }
    r.routing_errors = sweep.failures.clone();
    r.delivered = delivered.len();
    r.undelivered = deliverable.difference(&delivered).copied().collect();
    r.outside_oracle = delivered.difference(&oracle).copied().collect();
    r.unreachable_healthy = net
        .coords()
        .filter(|&c| matches!(cfg.class(c), NodeClass::Safe | NodeClass::Boundary))
        .filter(|c| !oracle.contains(c))
        .collect();

    let g = cdg_from_sweep(net, cfg, &sweep);
    r.cdg_vertices = g.vertices.len();
    r.cdg_edges = g.edge_count();
    r.cdg_cycle = has_cycle(&g);
    r
}

/// Builds the configuration for `faults` and verifies it; construction
/// failures such as a boundary clash end up in `config_error`.
pub fn verify_faults(net: &Network, faults: &FaultSet, merge: bool) -> (Option<FaultConfiguration>, Report) {
    let built = faults
        .validate(net.config())
        .and_then(|_| FaultConfiguration::build(net, faults, merge));
    match built {
        Ok(cfg) => {
            let r = verify_all_routes(net, &cfg);
            (Some(cfg), r)
        }
        Err(e) => (
            None,
            Report {
                width: net.width(),
                height: net.height(),
                config_error: Some(provenance(&e)),
                ..Default::default()
            },
        ),
    }
}

fn provenance(e: &Error) -> String {
    match e {
        Error::BoundaryClash { .. } | Error::ForbiddenFault(_) => format!("BoundaryClash: {e}"),
        other => other.to_string(),
    }
}

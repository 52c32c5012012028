//! Fault patterns, node classification and faulty-block formation.
//!
//! Faulty and victimized (unsafe) nodes are grouped into convex rectangles.
//! Each rectangle is framed by two healthy lines on every side so that a
//! packet running along a side always finds a line pointing the way it needs
//! to go.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{
    eligible_fault_locations, is_forbidden_fault_location, Coord, Direction, Network,
    NetworkConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaultModel {
    #[serde(rename = "rf")]
    Random,
    #[serde(rename = "cf")]
    Correlated,
}

impl FaultModel {
    pub fn tag(self) -> &'static str {
        match self {
            FaultModel::Random => "rf",
            FaultModel::Correlated => "cf",
        }
    }
}

impl std::str::FromStr for FaultModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rf" | "random" => Ok(FaultModel::Random),
            "cf" | "correlated" => Ok(FaultModel::Correlated),
            other => Err(Error::Usage(format!("unknown fault model '{other}'"))),
        }
    }
}

/// Set of failed nodes plus the parameters that generated it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FaultSet {
    pub faults: BTreeSet<Coord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<FaultModel>,
    #[serde(default)]
    pub p_f: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl FaultSet {
    pub fn from_coords<I: IntoIterator<Item = Coord>>(coords: I) -> Self {
        FaultSet {
            faults: coords.into_iter().collect(),
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.faults.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faults.is_empty()
    }

    pub fn contains(&self, c: Coord) -> bool {
        self.faults.contains(&c)
    }

    pub fn validate(&self, config: &NetworkConfig) -> Result<()> {
        for &c in &self.faults {
            if !config.contains(c) {
                return Err(Error::OutOfBounds(c, config.width, config.height));
            }
            if is_forbidden_fault_location(c, config) {
                return Err(Error::ForbiddenFault(c));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fault set serialization is infallible")
    }

    /// Accepts either the full object or a bare `[[x,y],...]` list.
    pub fn from_json(s: &str) -> Result<Self> {
        if let Ok(set) = serde_json::from_str::<FaultSet>(s) {
            return Ok(set);
        }
        serde_json::from_str::<Vec<Coord>>(s)
            .map(FaultSet::from_coords)
            .map_err(|e| Error::Usage(format!("bad fault file: {e}")))
    }
}

/// Independent per-node failures with probability `p_f`; forbidden
/// locations never fail.
pub fn sample_random_faults<R: Rng + ?Sized>(
    config: &NetworkConfig,
    p_f: f64,
    rng: &mut R,
) -> FaultSet {
    let faults = eligible_fault_locations(config)
        .into_iter()
        .filter(|_| rng.gen::<f64>() < p_f)
        .collect();
    FaultSet {
        faults,
        model: Some(FaultModel::Random),
        p_f,
        seed: None,
    }
}

/// Uniform draw of exactly `count` eligible nodes, i.e. independent failures
/// conditioned on the total.
pub fn sample_random_fault_count<R: Rng + ?Sized>(
    config: &NetworkConfig,
    count: usize,
    rng: &mut R,
) -> Result<FaultSet> {
    let eligible = eligible_fault_locations(config);
    if count > eligible.len() {
        return Err(Error::InfeasibleTarget {
            requested: count,
            eligible: eligible.len(),
        });
    }
    let faults = eligible.choose_multiple(rng, count).copied().collect();
    Ok(FaultSet {
        faults,
        model: Some(FaultModel::Random),
        p_f: count as f64 / eligible.len().max(1) as f64,
        seed: None,
    })
}

/// Failure probability of a node at Euclidean distance `d_e` from the seed.
pub fn correlated_probability(d_e: f64, p_f: f64) -> f64 {
    if d_e <= 0.0 {
        1.0
    } else {
        (5.0 / d_e * p_f).min(1.0)
    }
}

/// Spatially clustered faults around a uniformly drawn seed node. Rounds over
/// the remaining eligible nodes repeat until exactly `target_count` nodes
/// have failed.
pub fn sample_correlated_faults<R: Rng + ?Sized>(
    config: &NetworkConfig,
    target_count: usize,
    p_f: f64,
    rng: &mut R,
) -> Result<FaultSet> {
    let eligible = eligible_fault_locations(config);
    if target_count == 0 || target_count > eligible.len() {
        return Err(Error::InfeasibleTarget {
            requested: target_count,
            eligible: eligible.len(),
        });
    }
    if target_count > 1 && (p_f.is_nan() || p_f <= 0.0) {
        return Err(Error::Config(format!(
            "correlated sampling needs p_f > 0, got {p_f}"
        )));
    }
    let seed = *eligible.choose(rng).expect("eligible set is nonempty");
    let mut faults = BTreeSet::from([seed]);
    let mut candidates: Vec<Coord> = eligible.into_iter().filter(|&c| c != seed).collect();
    while faults.len() < target_count {
        candidates.shuffle(rng);
        let mut kept = Vec::with_capacity(candidates.len());
        for c in candidates.drain(..) {
            if faults.len() < target_count {
                let dx = c.x as f64 - seed.x as f64;
                let dy = c.y as f64 - seed.y as f64;
                if rng.gen::<f64>() < correlated_probability(dx.hypot(dy), p_f) {
                    faults.insert(c);
                    continue;
                }
            }
            kept.push(c);
        }
        candidates = kept;
    }
    Ok(FaultSet {
        faults,
        model: Some(FaultModel::Correlated),
        p_f,
        seed: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeClass {
    Safe,
    Faulty,
    Unsafe,
    Boundary,
}

impl NodeClass {
    /// Faulty or victimized: inside a block core.
    pub fn is_blocked(self) -> bool {
        matches!(self, NodeClass::Faulty | NodeClass::Unsafe)
    }

    pub fn symbol(self) -> char {
        match self {
            NodeClass::Safe => '.',
            NodeClass::Faulty => 'X',
            NodeClass::Unsafe => 'u',
            NodeClass::Boundary => 'b',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeClassification {
    width: usize,
    height: usize,
    classes: Vec<NodeClass>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub safe: usize,
    pub faulty: usize,
    pub unsafe_nodes: usize,
    pub boundary: usize,
}

impl NodeClassification {
    pub fn all_safe(width: usize, height: usize) -> Self {
        NodeClassification {
            width,
            height,
            classes: vec![NodeClass::Safe; width * height],
        }
    }

    pub fn get(&self, c: Coord) -> NodeClass {
        self.classes[c.y * self.width + c.x]
    }

    pub fn set(&mut self, c: Coord, class: NodeClass) {
        self.classes[c.y * self.width + c.x] = class;
    }

    fn get_signed(&self, x: i64, y: i64) -> Option<NodeClass> {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            None
        } else {
            Some(self.classes[y as usize * self.width + x as usize])
        }
    }

    fn blocked_at(&self, x: i64, y: i64) -> bool {
        self.get_signed(x, y).is_some_and(NodeClass::is_blocked)
    }

    pub fn coords(&self) -> impl Iterator<Item = Coord> + '_ {
        let w = self.width;
        (0..self.classes.len()).map(move |i| Coord::new(i % w, i / w))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Coord, NodeClass)> + '_ {
        self.coords().zip(self.classes.iter().copied())
    }

    pub fn with_class(&self, class: NodeClass) -> impl Iterator<Item = Coord> + '_ {
        self.iter().filter(move |(_, k)| *k == class).map(|(c, _)| c)
    }

    pub fn counts(&self) -> ClassCounts {
        let mut n = ClassCounts::default();
        for &k in &self.classes {
            match k {
                NodeClass::Safe => n.safe += 1,
                NodeClass::Faulty => n.faulty += 1,
                NodeClass::Unsafe => n.unsafe_nodes += 1,
                NodeClass::Boundary => n.boundary += 1,
            }
        }
        n
    }

    /// One character per node, north row first.
    pub fn ascii(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for y in (0..self.height).rev() {
            for x in 0..self.width {
                out.push(self.get(Coord::new(x, y)).symbol());
            }
            out.push('\n');
        }
        out
    }

    /// Whether a healthy node at `c` must be victimized: two blocked 1-hop
    /// neighbors, or one blocked node within two hops along each axis.
    fn violates_unsafe_rules(&self, c: Coord) -> bool {
        let (x, y) = (c.x as i64, c.y as i64);
        let one_hop = [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)]
            .into_iter()
            .filter(|&(a, b)| self.blocked_at(a, b))
            .count();
        if one_hop >= 2 {
            return true;
        }
        let along_x = [x - 2, x - 1, x + 1, x + 2]
            .into_iter()
            .any(|a| self.blocked_at(a, y));
        let along_y = [y - 2, y - 1, y + 1, y + 2]
            .into_iter()
            .any(|b| self.blocked_at(x, b));
        along_x && along_y
    }

    /// Applies the unsafe rules until nothing changes. Returns whether any
    /// node was victimized.
    fn run_unsafe_fixpoint(&mut self) -> bool {
        let mut any = false;
        loop {
            let mut changed = false;
            for i in 0..self.classes.len() {
                if self.classes[i] != NodeClass::Safe {
                    continue;
                }
                let c = Coord::new(i % self.width, i / self.width);
                if self.violates_unsafe_rules(c) {
                    self.classes[i] = NodeClass::Unsafe;
                    changed = true;
                }
            }
            if !changed {
                return any;
            }
            any = true;
        }
    }
}

/// Marks faults and iterates the two unsafe rules to a fixpoint. Boundary
/// labels are assigned later by [`form_faulty_blocks`].
pub fn classify_nodes(net: &Network, faults: &FaultSet) -> NodeClassification {
    let mut cls = NodeClassification::all_safe(net.width(), net.height());
    for &c in &faults.faults {
        if net.contains(c) {
            cls.set(c, NodeClass::Faulty);
        }
    }
    cls.run_unsafe_fixpoint();
    cls
}

/// Inclusive rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        assert!(x0 <= x1 && y0 <= y1, "degenerate rectangle");
        Rect { x0, y0, x1, y1 }
    }

    pub fn point(c: Coord) -> Self {
        Rect::new(c.x, c.y, c.x, c.y)
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, c: Coord) -> bool {
        (self.x0..=self.x1).contains(&c.x) && (self.y0..=self.y1).contains(&c.y)
    }

    pub fn union(&self, o: &Rect) -> Rect {
        Rect {
            x0: self.x0.min(o.x0),
            y0: self.y0.min(o.y0),
            x1: self.x1.max(o.x1),
            y1: self.y1.max(o.y1),
        }
    }

    pub fn include(&mut self, c: Coord) {
        *self = self.union(&Rect::point(c));
    }

    /// Whether the rectangle grown by `margin` on every side touches `o`.
    pub fn within(&self, o: &Rect, margin: usize) -> bool {
        self.x0 <= o.x1 + margin
            && o.x0 <= self.x1 + margin
            && self.y0 <= o.y1 + margin
            && o.y0 <= self.y1 + margin
    }

    pub fn coords(&self) -> impl Iterator<Item = Coord> + '_ {
        (self.y0..=self.y1).flat_map(move |y| (self.x0..=self.x1).map(move |x| Coord::new(x, y)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    North,
    South,
    East,
    West,
}

/// One of the two lines forming a block side: a row index for North/South
/// sides, a column index for East/West sides, and the direction its links run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundaryLine {
    pub index: usize,
    pub dir: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundarySide {
    pub side: Side,
    pub outer: BoundaryLine,
    pub inner: BoundaryLine,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaultyBlock {
    pub core: Rect,
    pub sides: [BoundarySide; 4],
}

impl FaultyBlock {
    /// Requires the two-line frame to fit in the grid with row 0 left clear.
    pub fn new(core: Rect, net: &Network) -> Result<Self> {
        if core.x0 < 2 || core.y0 < 3 || core.x1 + 2 >= net.width() || core.y1 + 2 >= net.height() {
            return Err(Error::BoundaryClash {
                core: (core.x0, core.y0, core.x1, core.y1),
            });
        }
        let row = |y: usize| BoundaryLine {
            index: y,
            dir: Network::horizontal_dir(y),
        };
        let col = |x: usize| BoundaryLine {
            index: x,
            dir: Network::vertical_dir(x),
        };
        let sides = [
            BoundarySide {
                side: Side::South,
                outer: row(core.y0 - 2),
                inner: row(core.y0 - 1),
            },
            BoundarySide {
                side: Side::West,
                outer: col(core.x0 - 2),
                inner: col(core.x0 - 1),
            },
            BoundarySide {
                side: Side::North,
                outer: row(core.y1 + 2),
                inner: row(core.y1 + 1),
            },
            BoundarySide {
                side: Side::East,
                outer: col(core.x1 + 2),
                inner: col(core.x1 + 1),
            },
        ];
        Ok(FaultyBlock { core, sides })
    }

    pub fn side(&self, s: Side) -> &BoundarySide {
        self.sides.iter().find(|b| b.side == s).expect("all four sides present")
    }

    /// Core plus its two-line frame.
    pub fn frame(&self) -> Rect {
        let c = self.core;
        Rect {
            x0: c.x0 - 2,
            y0: c.y0 - 2,
            x1: c.x1 + 2,
            y1: c.y1 + 2,
        }
    }

    pub fn in_frame(&self, c: Coord) -> bool {
        self.frame().contains(c) && !self.core.contains(c)
    }

    pub fn frame_nodes(&self) -> impl Iterator<Item = Coord> + '_ {
        let f = self.frame();
        let core = self.core;
        (f.y0..=f.y1)
            .flat_map(move |y| (f.x0..=f.x1).map(move |x| Coord::new(x, y)))
            .filter(move |c| !core.contains(*c))
    }

    pub fn south_rows(&self) -> [usize; 2] {
        [self.core.y0 - 2, self.core.y0 - 1]
    }

    pub fn north_rows(&self) -> [usize; 2] {
        [self.core.y1 + 1, self.core.y1 + 2]
    }

    pub fn west_cols(&self) -> [usize; 2] {
        [self.core.x0 - 2, self.core.x0 - 1]
    }

    pub fn core_cols(&self) -> std::ops::RangeInclusive<usize> {
        self.core.x0..=self.core.x1
    }

    pub fn core_rows(&self) -> std::ops::RangeInclusive<usize> {
        self.core.y0..=self.core.y1
    }

    /// The westbound (odd) line of the southern side.
    pub fn south_westbound_row(&self) -> usize {
        self.south_rows().into_iter().find(|y| y % 2 == 1).unwrap()
    }

    /// The northbound (even) line of the western side.
    pub fn west_northbound_col(&self) -> usize {
        self.west_cols().into_iter().find(|x| x % 2 == 0).unwrap()
    }

    /// The eastbound (even) line of the northern side.
    pub fn north_eastbound_row(&self) -> usize {
        self.north_rows().into_iter().find(|y| y % 2 == 0).unwrap()
    }

    pub fn in_south_lines(&self, c: Coord) -> bool {
        self.south_rows().contains(&c.y) && (self.frame().x0..=self.frame().x1).contains(&c.x)
    }

    pub fn in_west_lines(&self, c: Coord) -> bool {
        self.west_cols().contains(&c.x) && (self.frame().y0..=self.frame().y1).contains(&c.y)
    }
}

/// Grows Faulty/Unsafe groups into convex blocks: 4-connected components,
/// bounding rectangles, merging of rectangles whose frame would contain
/// another core, and victimization of everything inside, repeated until the
/// unsafe rules and the rectangles agree. Frame nodes are then labelled
/// Boundary.
pub fn form_faulty_blocks(net: &Network, cls: &mut NodeClassification) -> Result<Vec<FaultyBlock>> {
    for i in 0..cls.classes.len() {
        if cls.classes[i] == NodeClass::Boundary {
            cls.classes[i] = NodeClass::Safe;
        }
    }
    let rects = loop {
        cls.run_unsafe_fixpoint();
        let mut rects = blocked_components(cls);
        merge_close_rects(&mut rects, 2);
        let mut changed = false;
        for r in &rects {
            for c in r.coords() {
                if cls.get(c) == NodeClass::Safe {
                    cls.set(c, NodeClass::Unsafe);
                    changed = true;
                }
            }
        }
        if !changed {
            break rects;
        }
    };
    let mut blocks = rects
        .into_iter()
        .map(|r| FaultyBlock::new(r, net))
        .collect::<Result<Vec<_>>>()?;
    blocks.sort_by_key(|b| (b.core.y0, b.core.x0));
    for b in &blocks {
        for c in b.frame_nodes() {
            debug_assert!(!cls.get(c).is_blocked());
            cls.set(c, NodeClass::Boundary);
        }
    }
    Ok(blocks)
}

fn blocked_components(cls: &NodeClassification) -> Vec<Rect> {
    let mut seen = vec![false; cls.classes.len()];
    let mut rects = Vec::new();
    for start in 0..cls.classes.len() {
        if seen[start] || !cls.classes[start].is_blocked() {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut rect = Rect::point(Coord::new(start % cls.width, start / cls.width));
        while let Some(i) = stack.pop() {
            let c = Coord::new(i % cls.width, i / cls.width);
            rect.include(c);
            let (x, y) = (c.x as i64, c.y as i64);
            for (a, b) in [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)] {
                if cls.blocked_at(a, b) {
                    let j = b as usize * cls.width + a as usize;
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        rects.push(rect);
    }
    rects
}

fn merge_close_rects(rects: &mut Vec<Rect>, margin: usize) {
    'outer: loop {
        for i in 0..rects.len() {
            for j in i + 1..rects.len() {
                if rects[i].within(&rects[j], margin) {
                    let merged = rects[i].union(&rects[j]);
                    rects.swap_remove(j);
                    rects[i] = merged;
                    continue 'outer;
                }
            }
        }
        return;
    }
}

/// Finds a block that must be merged with `blocks[si]` for south-last
/// routing to stay legal. Packets leave a block at the top of its western
/// climb, on the first even row where no western line they ride still runs
/// beside a core. Three geometries trap them:
///
/// * the climb column runs into another core;
/// * the climb is carried past a block whose cores do not reach as far east;
///   destinations beside that block can then only be reached by a south turn;
/// * the exit row is the eastbound inner southern line of a block whose core
///   columns the eastward run reaches; the westbound line is then one row to
///   the south.
///
/// Stacked blocks whose cores span exactly the same columns never match.
fn overlap_partner(si: usize, blocks: &[FaultyBlock]) -> Option<usize> {
    let s = &blocks[si];
    let col = s.west_northbound_col();
    let mut carried = Vec::new();
    let mut y = s.core.y1 + 1;
    loop {
        let at = Coord::new(col, y);
        if let Some(j) = blocks.iter().position(|b| b.core.contains(at)) {
            return Some(j);
        }
        let beside: Vec<usize> = (0..blocks.len())
            .filter(|&j| j != si && blocks[j].in_west_lines(at) && blocks[j].core.y1 >= y)
            .collect();
        if y.is_multiple_of(2) && beside.is_empty() {
            break;
        }
        carried.extend(beside);
        y += 1;
    }
    if let Some(&j) = carried
        .iter()
        .find(|&&j| s.core.x1 >= blocks[j].core.x1 + 2)
    {
        return Some(j);
    }
    blocks
        .iter()
        .position(|n| y + 1 == n.core.y0 && n.core.x1 >= col && n.core.x0 <= s.core.x1 + 1)
}

/// First pair of blocks that must be merged, if any.
pub fn find_problematic_overlap(blocks: &[FaultyBlock]) -> Option<(usize, usize)> {
    (0..blocks.len()).find_map(|i| overlap_partner(i, blocks).map(|j| (i.min(j), i.max(j))))
}

/// Whether two blocks alone form a problematic overlap.
pub fn is_problematic_overlap(a: &FaultyBlock, b: &FaultyBlock) -> bool {
    find_problematic_overlap(&[a.clone(), b.clone()]).is_some()
}

/// Victimizes problematic north/south frame overlaps until none remain,
/// re-forming blocks after each merge.
pub fn merge_super_blocks(
    net: &Network,
    mut blocks: Vec<FaultyBlock>,
    mut cls: NodeClassification,
) -> Result<(Vec<FaultyBlock>, NodeClassification)> {
    loop {
        let Some((i, j)) = find_problematic_overlap(&blocks) else {
            return Ok((blocks, cls));
        };
        let merged = blocks[i].core.union(&blocks[j].core);
        for c in merged.coords() {
            if !cls.get(c).is_blocked() {
                cls.set(c, NodeClass::Unsafe);
            }
        }
        blocks = form_faulty_blocks(net, &mut cls)?;
    }
}

/// Classified grid plus final blocks, with per-node block lookups.
#[derive(Debug, Clone)]
pub struct FaultConfiguration {
    pub classification: NodeClassification,
    pub blocks: Vec<FaultyBlock>,
    core_owner: Vec<Option<u32>>,
    frame_owners: Vec<Vec<u32>>,
}

impl FaultConfiguration {
    pub fn new(net: &Network, classification: NodeClassification, blocks: Vec<FaultyBlock>) -> Self {
        let n = net.node_count();
        let mut core_owner = vec![None; n];
        let mut frame_owners = vec![Vec::new(); n];
        for (i, b) in blocks.iter().enumerate() {
            for c in b.core.coords() {
                core_owner[net.index(c)] = Some(i as u32);
            }
            for c in b.frame_nodes() {
                frame_owners[net.index(c)].push(i as u32);
            }
        }
        FaultConfiguration {
            classification,
            blocks,
            core_owner,
            frame_owners,
        }
    }

    pub fn fault_free(net: &Network) -> Self {
        FaultConfiguration::new(
            net,
            NodeClassification::all_safe(net.width(), net.height()),
            Vec::new(),
        )
    }

    /// Classify, form blocks and (optionally) merge super blocks.
    pub fn build(net: &Network, faults: &FaultSet, merge: bool) -> Result<Self> {
        let mut cls = classify_nodes(net, faults);
        let blocks = form_faulty_blocks(net, &mut cls)?;
        let (blocks, cls) = if merge {
            merge_super_blocks(net, blocks, cls)?
        } else {
            (blocks, cls)
        };
        Ok(FaultConfiguration::new(net, cls, blocks))
    }

    pub fn class(&self, c: Coord) -> NodeClass {
        self.classification.get(c)
    }

    pub fn width(&self) -> usize {
        self.classification.width
    }

    fn idx(&self, c: Coord) -> usize {
        c.y * self.classification.width + c.x
    }

    pub fn core_block(&self, c: Coord) -> Option<&FaultyBlock> {
        self.core_owner[self.idx(c)].map(|i| &self.blocks[i as usize])
    }

    /// Descriptors stored at a boundary node: every block whose frame holds it.
    pub fn frame_blocks(&self, c: Coord) -> impl Iterator<Item = &FaultyBlock> + '_ {
        self.frame_owners[self.idx(c)]
            .iter()
            .map(|&i| &self.blocks[i as usize])
    }

    /// Destinations: healthy nodes outside every frame.
    pub fn deliverable(&self) -> impl Iterator<Item = Coord> + '_ {
        self.classification.with_class(NodeClass::Safe)
    }

    pub fn ascii(&self) -> String {
        self.classification.ascii()
    }

    pub fn block_summary(&self) -> BlockStats {
        BlockStats {
            count: self.blocks.len(),
            core_area: self.blocks.iter().map(|b| b.core.area()).sum(),
            boundary_nodes: self.classification.counts().boundary,
        }
    }

    pub fn describe(&self) -> String {
        let mut s = String::new();
        for (i, b) in self.blocks.iter().enumerate() {
            let c = b.core;
            let _ = writeln!(s, "block {i}: core x[{}..{}] y[{}..{}]", c.x0, c.x1, c.y0, c.y1);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockStats {
    pub count: usize,
    pub core_area: usize,
    pub boundary_nodes: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_network;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(w: usize, h: usize) -> Network {
        build_network(NetworkConfig::new(w, h)).unwrap()
    }

    fn c(x: usize, y: usize) -> Coord {
        Coord::new(x, y)
    }

    fn faults(list: &[(usize, usize)]) -> FaultSet {
        FaultSet::from_coords(list.iter().map(|&(x, y)| c(x, y)))
    }

    #[test]
    fn zero_probability_gives_no_faults() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = NetworkConfig::new(25, 25);
        assert!(sample_random_faults(&cfg, 0.0, &mut rng).is_empty());
    }

    #[test]
    fn random_faults_respect_band_and_rate() {
        let cfg = NetworkConfig::new(25, 25);
        let eligible = eligible_fault_locations(&cfg).len() as f64;
        let p = 0.04;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let runs = 10_000;
        let mut total = 0usize;
        for _ in 0..runs {
            let f = sample_random_faults(&cfg, p, &mut rng);
            assert!(f.faults.iter().all(|c| c.x != 0));
            f.validate(&cfg).unwrap();
            total += f.len();
        }
        let mean = total as f64 / runs as f64;
        let expected = p * eligible;
        let sigma = (eligible * p * (1.0 - p) / runs as f64).sqrt();
        assert!((mean - expected).abs() < 3.0 * sigma, "mean {mean} vs {expected}");

        let a = sample_random_faults(&cfg, p, &mut ChaCha8Rng::seed_from_u64(3));
        let b = sample_random_faults(&cfg, p, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }

    #[test]
    fn exact_count_sampling() {
        let cfg = NetworkConfig::new(25, 25);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = sample_random_fault_count(&cfg, 25, &mut rng).unwrap();
        assert_eq!(f.len(), 25);
        f.validate(&cfg).unwrap();
        assert!(sample_random_fault_count(&cfg, 10_000, &mut rng).is_err());
    }

    #[test]
    fn correlated_probability_function() {
        assert_eq!(correlated_probability(5.0, 0.3), 0.3);
        assert_eq!(correlated_probability(1.0, 0.5), 1.0);
        assert!((correlated_probability(10.0, 0.2) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn correlated_single_is_seed() {
        let cfg = NetworkConfig::new(25, 25);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = sample_correlated_faults(&cfg, 1, 0.02, &mut rng).unwrap();
        assert_eq!(f.len(), 1);
        f.validate(&cfg).unwrap();
        assert!(matches!(
            sample_correlated_faults(&cfg, 100_000, 0.02, &mut rng),
            Err(Error::InfeasibleTarget { .. })
        ));
    }

    fn mean_pairwise(f: &FaultSet) -> f64 {
        let v: Vec<_> = f.faults.iter().collect();
        let mut s = 0.0;
        let mut n = 0.0;
        for i in 0..v.len() {
            for j in i + 1..v.len() {
                let dx = v[i].x as f64 - v[j].x as f64;
                let dy = v[i].y as f64 - v[j].y as f64;
                s += dx.hypot(dy);
                n += 1.0;
            }
        }
        s / n
    }

    #[test]
    fn correlated_faults_cluster_more_than_random() {
        let cfg = NetworkConfig::new(25, 25);
        let (mut cf, mut rf) = (0.0, 0.0);
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = sample_correlated_faults(&cfg, 10, 0.016, &mut rng).unwrap();
            assert_eq!(a.len(), 10);
            a.validate(&cfg).unwrap();
            let b = sample_random_fault_count(&cfg, 10, &mut rng).unwrap();
            cf += mean_pairwise(&a);
            rf += mean_pairwise(&b);
        }
        assert!(cf < rf, "cf {cf} rf {rf}");
    }

    #[test]
    fn isolated_fault_has_no_victims() {
        let n = net(25, 25);
        let cls = classify_nodes(&n, &faults(&[(5, 5)]));
        assert_eq!(cls.counts().unsafe_nodes, 0);
        assert_eq!(cls.counts().faulty, 1);
    }

    #[test]
    fn diagonal_pair_victimizes_corners() {
        let n = net(25, 25);
        let cls = classify_nodes(&n, &faults(&[(6, 6), (7, 7)]));
        assert_eq!(cls.get(c(7, 6)), NodeClass::Unsafe);
        assert_eq!(cls.get(c(6, 7)), NodeClass::Unsafe);
        assert_eq!(cls.counts().unsafe_nodes, 2);
    }

    #[test]
    fn gap_of_one_is_filled() {
        let n = net(25, 25);
        let cls = classify_nodes(&n, &faults(&[(6, 6), (8, 6)]));
        assert_eq!(cls.get(c(7, 6)), NodeClass::Unsafe);
        assert_eq!(cls.counts().unsafe_nodes, 1);
    }

    // Brute-force check of the rules on every node, independent of sweep order.
    fn is_fixpoint(cls: &NodeClassification) -> bool {
        cls.coords()
            .filter(|&c| cls.get(c) == NodeClass::Safe)
            .all(|c| !cls.violates_unsafe_rules(c))
    }

    #[test]
    fn classification_is_idempotent() {
        let n = net(25, 25);
        let cfg = *n.config();
        for seed in 0..20 {
            let f = sample_random_faults(&cfg, 0.05, &mut ChaCha8Rng::seed_from_u64(seed));
            let cls = classify_nodes(&n, &f);
            assert!(is_fixpoint(&cls));
            let mut again = cls.clone();
            assert!(!again.run_unsafe_fixpoint());
            assert_eq!(again, cls);
        }
    }

    #[test]
    fn single_fault_block_geometry() {
        let n = net(25, 25);
        let mut cls = classify_nodes(&n, &faults(&[(5, 5)]));
        let blocks = form_faulty_blocks(&n, &mut cls).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].core, Rect::new(5, 5, 5, 5));
        assert_eq!(blocks[0].frame(), Rect::new(3, 3, 7, 7));
        assert_eq!(cls.counts().boundary, 24);
        for y in 3..=7 {
            for x in 3..=7 {
                if (x, y) != (5, 5) {
                    assert_eq!(cls.get(c(x, y)), NodeClass::Boundary);
                }
            }
        }
        // lines of each side run in opposite directions
        for s in &blocks[0].sides {
            assert_eq!(s.outer.dir.opposite(), s.inner.dir);
        }
        assert_eq!(blocks[0].south_westbound_row(), 3);
        assert_eq!(blocks[0].west_northbound_col(), 4);
        assert_eq!(blocks[0].north_eastbound_row(), 6);
    }

    #[test]
    fn diagonal_pair_forms_two_by_two_block() {
        let n = net(25, 25);
        let mut cls = classify_nodes(&n, &faults(&[(6, 6), (7, 7)]));
        let blocks = form_faulty_blocks(&n, &mut cls).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].core, Rect::new(6, 6, 7, 7));
        let k = cls.counts();
        assert_eq!((k.faulty, k.unsafe_nodes), (2, 2));
    }

    #[test]
    fn empty_faults_empty_blocks() {
        let n = net(25, 25);
        let mut cls = classify_nodes(&n, &FaultSet::default());
        assert!(form_faulty_blocks(&n, &mut cls).unwrap().is_empty());
        assert_eq!(cls.counts().safe, 625);
    }

    #[test]
    fn forbidden_fault_clashes() {
        let n = net(25, 25);
        let f = faults(&[(1, 10)]);
        assert_eq!(f.validate(n.config()), Err(Error::ForbiddenFault(c(1, 10))));
        let mut cls = classify_nodes(&n, &f);
        assert!(matches!(
            form_faulty_blocks(&n, &mut cls),
            Err(Error::BoundaryClash { .. })
        ));
    }

    fn rect_faults(rects: &[Rect]) -> FaultSet {
        FaultSet::from_coords(rects.iter().flat_map(|r| r.coords().collect::<Vec<_>>()))
    }

    #[test]
    fn staggered_overlap_is_merged() {
        let n = net(25, 25);
        let f = rect_faults(&[Rect::new(10, 5, 14, 6), Rect::new(12, 9, 18, 10)]);
        let plain = FaultConfiguration::build(&n, &f, false).unwrap();
        assert_eq!(plain.blocks.len(), 2);
        assert!(is_problematic_overlap(&plain.blocks[0], &plain.blocks[1]));
        let merged = FaultConfiguration::build(&n, &f, true).unwrap();
        assert_eq!(merged.blocks.len(), 1);
        assert_eq!(merged.blocks[0].core, Rect::new(10, 5, 18, 10));
        for c in merged.blocks[0].core.coords() {
            assert!(merged.class(c).is_blocked());
        }
    }

    #[test]
    fn identical_extent_stack_is_exempt() {
        let n = net(25, 25);
        let f = rect_faults(&[Rect::new(10, 5, 12, 6), Rect::new(10, 9, 12, 10)]);
        let cfg = FaultConfiguration::build(&n, &f, true).unwrap();
        assert_eq!(cfg.blocks.len(), 2);
    }

    #[test]
    fn harmless_frame_overlap_is_kept() {
        let n = net(25, 25);
        let f = faults(&[(10, 5), (12, 8)]);
        let cfg = FaultConfiguration::build(&n, &f, true).unwrap();
        assert_eq!(cfg.blocks.len(), 2);
        let (a, b) = (&cfg.blocks[0], &cfg.blocks[1]);
        assert!(a.frame().y1 >= b.frame().y0 && a.frame().x1 >= b.frame().x0);
        assert!(!is_problematic_overlap(a, b));
    }

    #[test]
    fn chained_climb_needs_merge() {
        let n = net(25, 25);
        let f = rect_faults(&[Rect::new(17, 8, 20, 10), Rect::new(18, 13, 19, 15), Rect::new(18, 18, 18, 18)]);
        let plain = FaultConfiguration::build(&n, &f, false).unwrap();
        let b = &plain.blocks;
        assert_eq!(b.len(), 3);
        assert!(!is_problematic_overlap(&b[0], &b[1]));
        assert!(!is_problematic_overlap(&b[1], &b[2]));
        assert_eq!(find_problematic_overlap(b), Some((0, 2)));
        let merged = FaultConfiguration::build(&n, &f, true).unwrap();
        assert_eq!(merged.blocks.len(), 1);
        assert_eq!(merged.blocks[0].core, Rect::new(17, 8, 20, 18));
    }

    #[test]
    fn disjoint_frames_untouched() {
        let n = net(25, 25);
        let f = faults(&[(5, 5), (15, 15)]);
        let a = FaultConfiguration::build(&n, &f, false).unwrap();
        let b = FaultConfiguration::build(&n, &f, true).unwrap();
        assert_eq!(a.blocks, b.blocks);
        assert_eq!(a.classification, b.classification);
    }

    #[test]
    fn fault_set_json_round_trip() {
        let mut f = faults(&[(3, 4), (5, 6)]);
        f.model = Some(FaultModel::Correlated);
        f.p_f = 0.02;
        f.seed = Some(11);
        let back = FaultSet::from_json(&f.to_json()).unwrap();
        assert_eq!(back, f);
        let bare = FaultSet::from_json("[[3,4],[5,6]]").unwrap();
        assert_eq!(bare.faults, f.faults);
    }

    #[test]
    fn ascii_dump_symbols() {
        let n = net(9, 9);
        let cfg = FaultConfiguration::build(&n, &faults(&[(4, 4)]), true).unwrap();
        let art = cfg.ascii();
        let lines: Vec<&str> = art.lines().collect();
        assert_eq!(lines.len(), 9);
        assert_eq!(lines[8 - 4].chars().nth(4), Some('X'));
        assert_eq!(lines[8 - 2].chars().nth(2), Some('b'));
        assert_eq!(lines[0], ".........");
    }
}

//! Tick-based simulation of sequential directive delivery with
//! predecessor-originated ACKs, plus per-run metrics and aggregation.

use std::collections::{BTreeMap, VecDeque};
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::faults::{
    sample_correlated_faults, sample_random_fault_count, BlockStats, FaultConfiguration, FaultModel, FaultSet,
};
use crate::ft_routing::{hop_budget, next_hop_ft, RoutingMode};
use crate::routing::{ack_source, route_agnostic, PacketKind, Path};
use crate::topology::{Coord, Direction, Network, NetworkConfig};
use crate::verification::{verify_all_routes, Report};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub kind: PacketKind,
    pub src: Coord,
    pub dst: Coord,
    pub mode: RoutingMode,
    pub path_so_far: Path,
    pub inject_time: u64,
    pub deliver_time: Option<u64>,
    incoming: Option<Direction>,
}

impl Packet {
    fn new(kind: PacketKind, src: Coord, dst: Coord, tick: u64) -> Self {
        Packet {
            kind,
            src,
            dst,
            mode: RoutingMode::Normal,
            path_so_far: Path::single(src),
            inject_time: tick,
            deliver_time: None,
            incoming: None,
        }
    }

    pub fn position(&self) -> Coord {
        self.path_so_far.destination().expect("path is never empty")
    }

    pub fn is_delivered(&self) -> bool {
        self.position() == self.dst
    }
}

/// Parameters that produced a run's fault set.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FaultParams {
    pub model: Option<FaultModel>,
    pub fault_pct: f64,
    pub p_f: f64,
    pub run_seed: u64,
    pub fault_count: usize,
}

/// Outcome for one delivered directive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DestRecord {
    pub dst: Coord,
    pub data_hops: usize,
    pub ack_origin: Coord,
    pub ack_hops: usize,
    pub injected: u64,
    pub delivered: u64,
    pub ack_received: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub width: usize,
    pub height: usize,
    pub params: FaultParams,
    pub records: Vec<DestRecord>,
    pub delivered_count: usize,
    pub acks_received: usize,
    pub faulty: usize,
    pub unsafe_nodes: usize,
    pub boundary: usize,
    pub blocks: BlockStats,
    pub ticks: u64,
}

impl RunMetrics {
    pub fn node_count(&self) -> usize {
        self.width * self.height
    }

    pub fn mean_hops(&self) -> f64 {
        mean(self.records.iter().map(|r| r.data_hops as f64))
    }

    pub fn mean_ack_hops(&self) -> f64 {
        mean(self.records.iter().map(|r| r.ack_hops as f64))
    }

    pub fn spanned_fraction(&self) -> f64 {
        self.delivered_count as f64 / self.node_count() as f64
    }

    pub fn data_hops(&self) -> BTreeMap<Coord, usize> {
        self.records.iter().map(|r| (r.dst, r.data_hops)).collect()
    }
}

fn mean<I: Iterator<Item = f64>>(it: I) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn stddev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v.iter().copied());
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Simulates one run, visiting destinations in row-major order.
pub fn run_simulation(net: &Network, cfg: &FaultConfiguration, params: FaultParams) -> Result<RunMetrics> {
    let dests: Vec<Coord> = cfg.deliverable().collect();
    run_simulation_ordered(net, cfg, params, &dests)
}

/// Simulates one run with an explicit destination order.
///
/// Every node holds at most one packet. Each tick the packets in flight try
/// to advance one hop, oldest first; a packet whose next node is occupied
/// waits. A new directive enters at the input gateway whenever that node is
/// free, and a delivered directive leaves an ACK waiting at its ACK origin.
pub fn run_simulation_ordered(
    net: &Network,
    cfg: &FaultConfiguration,
    params: FaultParams,
    dests: &[Coord],
) -> Result<RunMetrics> {
    let budget = hop_budget(net, cfg);
    let mut occupied: Vec<bool> = vec![false; net.node_count()];
    let mut in_flight: Vec<(usize, Packet)> = Vec::new();
    let mut waiting_acks: VecDeque<(usize, Packet)> = VecDeque::new();
    let mut records: Vec<Option<DestRecord>> = vec![None; dests.len()];
    let mut next = 0usize;
    let mut tick = 0u64;

    loop {
        let mut progressed = false;
        let mut arrived = Vec::new();

        for (slot, (_, p)) in in_flight.iter_mut().enumerate() {
            let at = p.position();
            let d = next_hop_ft(at, p.incoming, p.dst, p.mode, cfg, net, p.kind)?;
            let to = net.step(at, d.dir).expect("validated by next_hop_ft");
            if occupied[net.index(to)] {
                continue;
            }
            if p.path_so_far.hops() >= budget {
                return Err(Error::HopBudgetExceeded { dest: p.dst, budget });
            }
            occupied[net.index(at)] = false;
            occupied[net.index(to)] = true;
            p.path_so_far.push(to);
            p.incoming = Some(d.dir);
            p.mode = d.mode;
            progressed = true;
            if p.is_delivered() {
                p.deliver_time = Some(tick + 1);
                arrived.push(slot);
            }
        }

        for slot in arrived.into_iter().rev() {
            let (i, p) = in_flight.remove(slot);
            occupied[net.index(p.dst)] = false;
            finish(net, &mut records, &mut waiting_acks, dests[i], i, p);
        }

        // ACKs wait at their origin until it is free.
        let mut still_waiting = VecDeque::new();
        while let Some((i, mut p)) = waiting_acks.pop_front() {
            let at = p.src;
            if occupied[net.index(at)] {
                still_waiting.push_back((i, p));
                continue;
            }
            progressed = true;
            if p.is_delivered() {
                p.deliver_time = Some(tick + 1);
                finish(net, &mut records, &mut still_waiting, dests[i], i, p);
            } else {
                occupied[net.index(at)] = true;
                in_flight.push((i, p));
            }
        }
        waiting_acks = still_waiting;

        let gw = net.input_gw();
        if next < dests.len() && !occupied[net.index(gw)] {
            let mut p = Packet::new(PacketKind::Directive, gw, dests[next], tick + 1);
            progressed = true;
            if p.is_delivered() {
                p.deliver_time = Some(tick + 1);
                finish(net, &mut records, &mut waiting_acks, dests[next], next, p);
            } else {
                occupied[net.index(gw)] = true;
                in_flight.push((next, p));
            }
            next += 1;
        }

        tick += 1;
        if next == dests.len() && in_flight.is_empty() && waiting_acks.is_empty() {
            break;
        }
        if !progressed {
            return Err(Error::Stalled(tick));
        }
    }

    let records: Vec<DestRecord> = records.into_iter().map(|r| r.expect("every destination finished")).collect();
    let counts = cfg.classification.counts();
    Ok(RunMetrics {
        width: net.width(),
        height: net.height(),
        params,
        delivered_count: records.len(),
        acks_received: records.len(),
        records,
        faulty: counts.faulty,
        unsafe_nodes: counts.unsafe_nodes,
        boundary: counts.boundary,
        blocks: cfg.block_summary(),
        ticks: tick,
    })
}

/// Handles a packet that reached its destination: a directive spawns its
/// ACK, an ACK completes the record.
fn finish(
    net: &Network,
    records: &mut [Option<DestRecord>],
    acks: &mut VecDeque<(usize, Packet)>,
    dst: Coord,
    i: usize,
    p: Packet,
) {
    let t = p.deliver_time.expect("delivered");
    match p.kind {
        PacketKind::Directive => {
            let origin = ack_source(&p.path_so_far).expect("path is never empty");
            records[i] = Some(DestRecord {
                dst,
                data_hops: p.path_so_far.hops(),
                ack_origin: origin,
                ack_hops: 0,
                injected: p.inject_time,
                delivered: t,
                ack_received: t,
            });
            acks.push_back((i, Packet::new(PacketKind::Ack, origin, net.ack_gw(), t)));
        }
        PacketKind::Ack => {
            let r = records[i].as_mut().expect("directive delivered first");
            r.ack_hops = p.path_so_far.hops();
            r.ack_received = t;
        }
    }
}

/// Number of faults injected for a percentage of all grid nodes.
pub fn fault_count_for_pct(config: &NetworkConfig, pct: f64) -> usize {
    (pct / 100.0 * config.node_count() as f64).round() as usize
}

/// Draws a fault set with exactly the node count implied by `pct`.
pub fn sample_faults<R: rand::Rng + ?Sized>(
    config: &NetworkConfig,
    model: FaultModel,
    pct: f64,
    rng: &mut R,
) -> Result<FaultSet> {
    let count = fault_count_for_pct(config, pct);
    if count == 0 {
        return Ok(FaultSet {
            model: Some(model),
            ..Default::default()
        });
    }
    let mut f = match model {
        FaultModel::Random => sample_random_fault_count(config, count, rng)?,
        FaultModel::Correlated => sample_correlated_faults(config, count, pct / 100.0, rng)?,
    };
    f.p_f = pct / 100.0;
    Ok(f)
}

/// Attempts made before giving up on a seed whose draws keep producing
/// blocks that touch the periphery.
pub const MAX_DRAWS: usize = 64;

/// One sampled, classified and (optionally) verified run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub faults: FaultSet,
    pub config: FaultConfiguration,
    pub metrics: RunMetrics,
    pub report: Option<Report>,
    /// Draws discarded because their blocks clashed with the periphery.
    pub rejected_draws: usize,
}

/// Samples faults for `seed`, builds the configuration with super-block
/// merging, optionally verifies it, and simulates it.
pub fn run_seeded(
    net: &Network,
    model: FaultModel,
    pct: f64,
    seed: u64,
    verify: bool,
) -> Result<RunOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rejected = 0;
    let (faults, config) = loop {
        let mut f = sample_faults(net.config(), model, pct, &mut rng)?;
        f.seed = Some(seed);
        match FaultConfiguration::build(net, &f, true) {
            Ok(c) => break (f, c),
            Err(Error::BoundaryClash { .. }) if rejected + 1 < MAX_DRAWS => rejected += 1,
            Err(e) => return Err(e),
        }
    };
    let params = FaultParams {
        model: Some(model),
        fault_pct: pct,
        p_f: faults.p_f,
        run_seed: seed,
        fault_count: faults.len(),
    };
    let report = verify.then(|| verify_all_routes(net, &config));
    let metrics = run_simulation(net, &config, params)?;
    Ok(RunOutcome {
        faults,
        config,
        metrics,
        report,
        rejected_draws: rejected,
    })
}

/// Per-destination hop counts of the fault-free routes.
pub fn fault_free_baseline(net: &Network) -> BTreeMap<Coord, usize> {
    net.coords()
        .map(|c| {
            let p = route_agnostic(net.input_gw(), c, net).expect("fault-free routes exist");
            (c, p.hops())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub offset: i64,
    pub count: usize,
}

/// Histogram of (path length - baseline length) over every delivered
/// destination of every run.
pub fn path_length_histogram(runs: &[RunMetrics], baseline: &BTreeMap<Coord, usize>) -> Vec<HistogramBin> {
    let mut h: BTreeMap<i64, usize> = BTreeMap::new();
    for r in runs {
        for rec in &r.records {
            if let Some(&b) = baseline.get(&rec.dst) {
                *h.entry(rec.data_hops as i64 - b as i64).or_default() += 1;
            }
        }
    }
    h.into_iter().map(|(offset, count)| HistogramBin { offset, count }).collect()
}

/// Share of histogram mass at offset 0.
pub fn zero_elongation_fraction(hist: &[HistogramBin]) -> f64 {
    let total: usize = hist.iter().map(|b| b.count).sum();
    let zero = hist.iter().find(|b| b.offset == 0).map_or(0, |b| b.count);
    if total == 0 {
        0.0
    } else {
        zero as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub width: usize,
    pub height: usize,
    pub model: Option<FaultModel>,
    pub fault_pct: f64,
    pub runs: usize,
    /// Mean over runs of the per-run mean directive hop count.
    pub mean_hops: f64,
    pub stddev_hops: f64,
    pub mean_ack_hops: f64,
    pub stddev_ack_hops: f64,
    /// Directive hop counts pooled over all runs.
    pub hop_histogram: Vec<(usize, usize)>,
    pub mean_faulty: f64,
    pub mean_unsafe: f64,
    pub mean_victimized: f64,
    pub mean_boundary: f64,
    pub mean_blocks: f64,
    pub spanned_fraction: f64,
    pub stddev_spanned: f64,
}

pub fn aggregate(runs: &[RunMetrics]) -> Result<Summary> {
    let first = runs.first().ok_or(Error::EmptyRuns)?;
    let same = |r: &RunMetrics| {
        r.width == first.width
            && r.height == first.height
            && r.params.model == first.params.model
            && r.params.fault_pct == first.params.fault_pct
    };
    if !runs.iter().all(same) {
        return Err(Error::HeterogeneousRuns);
    }
    let per = |f: &dyn Fn(&RunMetrics) -> f64| runs.iter().map(f).collect::<Vec<f64>>();
    let hops = per(&|r| r.mean_hops());
    let acks = per(&|r| r.mean_ack_hops());
    let spanned = per(&|r| r.spanned_fraction());
    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    for r in runs {
        for rec in &r.records {
            *hist.entry(rec.data_hops).or_default() += 1;
        }
    }
    let avg = |f: &dyn Fn(&RunMetrics) -> f64| mean(runs.iter().map(f));
    Ok(Summary {
        width: first.width,
        height: first.height,
        model: first.params.model,
        fault_pct: first.params.fault_pct,
        runs: runs.len(),
        mean_hops: mean(hops.iter().copied()),
        stddev_hops: stddev(&hops),
        mean_ack_hops: mean(acks.iter().copied()),
        stddev_ack_hops: stddev(&acks),
        hop_histogram: hist.into_iter().collect(),
        mean_faulty: avg(&|r| r.faulty as f64),
        mean_unsafe: avg(&|r| r.unsafe_nodes as f64),
        mean_victimized: avg(&|r| (r.faulty + r.unsafe_nodes) as f64),
        mean_boundary: avg(&|r| r.boundary as f64),
        mean_blocks: avg(&|r| r.blocks.count as f64),
        spanned_fraction: mean(spanned.iter().copied()),
        stddev_spanned: stddev(&spanned),
    })
}

/// One line of the per-run results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub model: String,
    pub fault_pct: f64,
    pub run_seed: u64,
    pub delivered: usize,
    pub faulty: usize,
    #[serde(rename = "unsafe")]
    pub unsafe_nodes: usize,
    pub boundary: usize,
    pub mean_hops: f64,
    pub mean_ack_hops: f64,
}

impl From<&RunMetrics> for RunRow {
    fn from(r: &RunMetrics) -> Self {
        RunRow {
            model: r.params.model.map_or("none", FaultModel::tag).to_string(),
            fault_pct: r.params.fault_pct,
            run_seed: r.params.run_seed,
            delivered: r.delivered_count,
            faulty: r.faulty,
            unsafe_nodes: r.unsafe_nodes,
            boundary: r.boundary,
            mean_hops: r.mean_hops(),
            mean_ack_hops: r.mean_ack_hops(),
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io {
        path: "<csv>".into(),
        msg: e.to_string(),
    }
}

pub fn write_rows_csv<W: Write, T: Serialize>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| csv_err(e.into()))
}

pub fn read_rows_csv<R: Read, T: serde::de::DeserializeOwned>(input: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(csv_err)
}

//! Economic security of timestamping over a mesh of zones.
//!
//! A zone graph has a market cap per zone and directed transfer channels
//! between zones. A consumer that timestamps onto a path of providers is
//! protected by the total stake along the path: slashing a safety violation
//! burns up to a third of each zone's cap, so economic security is the path
//! cap sum over three and censorship resistance is pinned by the weakest
//! zone on the path. The cross-staking model is the comparison point: a
//! zone can only borrow stake from direct neighbors, capped both by the
//! neighbor's own stake and by a power-cap ratio.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("zone graph does not parse: {0}")]
    Parse(String),
    #[error("duplicate zone id {0:?}")]
    DuplicateZone(String),
    #[error("channel references unknown zone {0:?}")]
    DanglingEdge(String),
    #[error("market cap of zone {0:?} is negative")]
    NegativeCap(String),
    #[error("unknown zone {0:?}")]
    UnknownZone(String),
    #[error("power cap {0} is outside [0, 1]")]
    BadPowerCap(f64),
    #[error("at most 64 zones are supported, got {0}")]
    TooManyZones(usize),
    #[error("report csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub id: String,
    pub market_cap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub from: String,
    pub to: String,
    pub transfers_per_hour: f64,
}

/// Vertices are zones, directed edges are transfer channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneGraph {
    pub zones: Vec<Zone>,
    pub channels: Vec<Channel>,
}

impl ZoneGraph {
    pub fn parse(json: &str) -> Result<ZoneGraph, MeshError> {
        let g: ZoneGraph =
            serde_json::from_str(json).map_err(|e| MeshError::Parse(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        if self.zones.len() > 64 {
            return Err(MeshError::TooManyZones(self.zones.len()));
        }
        let mut ids = BTreeSet::new();
        for z in &self.zones {
            if !ids.insert(z.id.as_str()) {
                return Err(MeshError::DuplicateZone(z.id.clone()));
            }
            if z.market_cap < 0.0 {
                return Err(MeshError::NegativeCap(z.id.clone()));
            }
        }
        for c in &self.channels {
            for end in [&c.from, &c.to] {
                if !ids.contains(end.as_str()) {
                    return Err(MeshError::DanglingEdge(end.clone()));
                }
            }
        }
        Ok(())
    }

    fn index(&self) -> BTreeMap<&str, usize> {
        self.zones
            .iter()
            .enumerate()
            .map(|(i, z)| (z.id.as_str(), i))
            .collect()
    }

    /// Out-neighbor adjacency by zone index.
    fn adjacency(&self) -> Vec<Vec<usize>> {
        let idx = self.index();
        let mut adj = vec![Vec::new(); self.zones.len()];
        for c in &self.channels {
            let (f, t) = (idx[c.from.as_str()], idx[c.to.as_str()]);
            if f != t && !adj[f].contains(&t) {
                adj[f].push(t);
            }
        }
        for out in &mut adj {
            out.sort_unstable();
        }
        adj
    }
}

/// Seconds between expected client updates over a channel, the latency
/// proxy derived from transfer frequency.
pub fn latency_proxy_seconds(transfers_per_hour: f64) -> f64 {
    if transfers_per_hour > 0.0 {
        3600.0 / transfers_per_hour
    } else {
        f64::INFINITY
    }
}

/// Whether candidate paths must start at the consumer (the protocol's
/// direction of checkpointing) or merely pass through it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PathOrigin {
    #[default]
    StartsAtConsumer,
    PassesThroughConsumer,
}

/// Best bounded path found for one zone.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSecurity {
    /// Sum of path market caps over three, in USD (unrounded).
    pub econ: f64,
    /// Weakest path zone's cap over three, in USD (unrounded).
    pub censor: f64,
    pub path: Vec<String>,
    /// True when the graph was large enough that beam search replaced the
    /// exact sweep.
    pub approximate: bool,
}

/// Zone counts up to this bound get the exact dynamic program; larger
/// graphs fall back to beam search.
const EXACT_ZONE_LIMIT: usize = 20;
const BEAM_WIDTH: usize = 64;

fn path_ids(g: &ZoneGraph, path: &[usize]) -> Vec<String> {
    path.iter().map(|&i| g.zones[i].id.clone()).collect()
}

/// rank[i] is the position of zone i's id in id-sorted order, so comparing
/// rank sequences is comparing paths by zone id without allocating.
fn id_ranks(g: &ZoneGraph) -> Vec<usize> {
    let mut order: Vec<usize> = (0..g.zones.len()).collect();
    order.sort_by(|&a, &b| g.zones[a].id.cmp(&g.zones[b].id));
    let mut rank = vec![0; g.zones.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    rank
}

fn cmp_paths(rank: &[usize], a: &[usize], b: &[usize]) -> std::cmp::Ordering {
    a.iter()
        .map(|&i| rank[i])
        .cmp(b.iter().map(|&i| rank[i]))
}

fn mask_score(caps: &[f64], mask: u64) -> f64 {
    caps.iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, c)| c)
        .sum()
}

/// Max-cap simple path of at most `k` edges. One search serves both
/// origin modes: states seeded at the consumer only, or at every zone with
/// a final filter for paths that visit the consumer.
fn best_path(
    g: &ZoneGraph,
    consumer: usize,
    k: usize,
    origin: PathOrigin,
) -> (f64, Vec<usize>, bool) {
    let caps: Vec<f64> = g.zones.iter().map(|z| z.market_cap).collect();
    let adj = g.adjacency();
    let rank = id_ranks(g);
    let approximate = g.zones.len() > EXACT_ZONE_LIMIT;

    // State: (visited set, last zone) -> lexicographically smallest path
    // realizing it. The score is a function of the visited set alone.
    let mut frontier: BTreeMap<(u64, usize), Vec<usize>> = BTreeMap::new();
    match origin {
        PathOrigin::StartsAtConsumer => {
            frontier.insert((1 << consumer, consumer), vec![consumer]);
        }
        PathOrigin::PassesThroughConsumer => {
            for i in 0..g.zones.len() {
                frontier.insert((1 << i, i), vec![i]);
            }
        }
    }

    let eligible = |mask: u64| mask & (1 << consumer) != 0;
    let mut best: Option<(f64, Vec<usize>)> = None;
    let consider = |mask: u64, path: &Vec<usize>, best: &mut Option<(f64, Vec<usize>)>| {
        if !eligible(mask) {
            return;
        }
        let score = mask_score(&caps, mask);
        let better = match best {
            None => true,
            Some((s, p)) => {
                score > *s
                    || (score == *s && cmp_paths(&rank, path, p) == std::cmp::Ordering::Less)
            }
        };
        if better {
            *best = Some((score, path.clone()));
        }
    };

    for (mask, path) in frontier.iter().map(|((m, _), p)| (*m, p)) {
        consider(mask, path, &mut best);
    }

    for _ in 0..k {
        let mut next: BTreeMap<(u64, usize), Vec<usize>> = BTreeMap::new();
        for ((mask, last), path) in &frontier {
            for &to in &adj[*last] {
                if mask & (1 << to) != 0 {
                    continue;
                }
                let nmask = mask | (1 << to);
                let mut npath = path.clone();
                npath.push(to);
                match next.get_mut(&(nmask, to)) {
                    Some(existing) => {
                        if cmp_paths(&rank, &npath, existing) == std::cmp::Ordering::Less {
                            *existing = npath;
                        }
                    }
                    None => {
                        next.insert((nmask, to), npath);
                    }
                }
            }
        }
        if approximate && next.len() > BEAM_WIDTH {
            let mut scored: Vec<(f64, (u64, usize), Vec<usize>)> = next
                .into_iter()
                .map(|(key, path)| (mask_score(&caps, key.0), key, path))
                .collect();
            scored.sort_by(|a, b| {
                b.0.total_cmp(&a.0)
                    .then_with(|| cmp_paths(&rank, &a.2, &b.2))
            });
            scored.truncate(BEAM_WIDTH);
            next = scored.into_iter().map(|(_, key, path)| (key, path)).collect();
        }
        for ((mask, _), path) in &next {
            consider(*mask, path, &mut best);
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }

    let (_, path) = best.expect("consumer itself is always a candidate path");
    (mask_score(&caps, path.iter().map(|&i| 1u64 << i).sum()), path, approximate)
}

/// Economic security and censorship resistance of the best timestamping
/// path for `consumer`, over simple directed paths of at most `k` edges.
pub fn best_path_security(
    g: &ZoneGraph,
    consumer: &str,
    k: usize,
) -> Result<PathSecurity, MeshError> {
    best_path_security_from(g, consumer, k, PathOrigin::default())
}

pub fn best_path_security_from(
    g: &ZoneGraph,
    consumer: &str,
    k: usize,
    origin: PathOrigin,
) -> Result<PathSecurity, MeshError> {
    let idx = g.index();
    let &c = idx
        .get(consumer)
        .ok_or_else(|| MeshError::UnknownZone(consumer.to_string()))?;
    let (score, path, approximate) = best_path(g, c, k, origin);
    let min_cap = path
        .iter()
        .map(|&i| g.zones[i].market_cap)
        .fold(f64::INFINITY, f64::min);
    Ok(PathSecurity {
        econ: score / 3.0,
        censor: min_cap / 3.0,
        path: path_ids(g, &path),
        approximate,
    })
}

/// Brute-force reference: every simple directed path is enumerated. Only
/// sensible for small graphs; the acceptance oracle runs it up to 8 zones.
pub fn exhaustive_best_path(
    g: &ZoneGraph,
    consumer: &str,
    k: usize,
    origin: PathOrigin,
) -> Result<PathSecurity, MeshError> {
    let idx = g.index();
    let &c = idx
        .get(consumer)
        .ok_or_else(|| MeshError::UnknownZone(consumer.to_string()))?;
    let adj = g.adjacency();
    let starts: Vec<usize> = match origin {
        PathOrigin::StartsAtConsumer => vec![c],
        PathOrigin::PassesThroughConsumer => (0..g.zones.len()).collect(),
    };
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut stack: Vec<Vec<usize>> = starts.into_iter().map(|s| vec![s]).collect();
    while let Some(path) = stack.pop() {
        if path.contains(&c) {
            let score: f64 = path.iter().map(|&i| g.zones[i].market_cap).sum();
            let better = match &best {
                None => true,
                Some((s, p)) => {
                    score > *s || (score == *s && path_ids(g, &path) < path_ids(g, p))
                }
            };
            if better {
                best = Some((score, path.clone()));
            }
        }
        if path.len() <= k {
            let last = *path.last().unwrap();
            for &to in &adj[last] {
                if !path.contains(&to) {
                    let mut next = path.clone();
                    next.push(to);
                    stack.push(next);
                }
            }
        }
    }
    let (score, path) = best.expect("start zones are candidate paths");
    let min_cap = path
        .iter()
        .map(|&i| g.zones[i].market_cap)
        .fold(f64::INFINITY, f64::min);
    Ok(PathSecurity {
        econ: score / 3.0,
        censor: min_cap / 3.0,
        path: path_ids(g, &path),
        approximate: false,
    })
}

/// Economic security under cross-staking with power cap `p`: the consumer's
/// own stake plus what each direct provider can lend, where a provider's
/// loan is bounded both by its own cap and by p/(1-p) times the consumer's.
pub fn cross_staking_security(
    g: &ZoneGraph,
    consumer: &str,
    p: f64,
) -> Result<f64, MeshError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(MeshError::BadPowerCap(p));
    }
    let idx = g.index();
    let &c = idx
        .get(consumer)
        .ok_or_else(|| MeshError::UnknownZone(consumer.to_string()))?;
    let x_i = g.zones[c].market_cap;
    let adj = g.adjacency();
    let borrowed: f64 = adj[c]
        .iter()
        .map(|&j| {
            let x_j = g.zones[j].market_cap;
            if p >= 1.0 {
                x_j
            } else {
                x_j.min(p / (1.0 - p) * x_i)
            }
        })
        .sum();
    Ok((x_i + borrowed) / 3.0)
}

// ---------------------------------------------------------------------------
// Reports

/// One row of the per-zone security table: timestamping path security at a
/// given `k` next to cross-staking security at each power cap.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub zone: String,
    pub k: usize,
    pub econ_security_usd: u64,
    pub censorship_usd: u64,
    pub path: Vec<String>,
    pub cross_staking_usd: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecurityReport {
    /// Power caps for the cross-staking columns, in [0, 1].
    pub ps: Vec<f64>,
    pub rows: Vec<ReportRow>,
    pub approximate: bool,
}

fn usd(x: f64) -> u64 {
    x.round() as u64
}

/// Full table: every zone as consumer, every requested path bound and
/// power cap.
pub fn report(g: &ZoneGraph, ks: &[usize], ps: &[f64]) -> Result<SecurityReport, MeshError> {
    let mut rows = Vec::new();
    let mut approximate = false;
    for zone in &g.zones {
        let cross: Vec<u64> = ps
            .iter()
            .map(|&p| cross_staking_security(g, &zone.id, p).map(usd))
            .collect::<Result<_, _>>()?;
        for &k in ks {
            let sec = best_path_security(g, &zone.id, k)?;
            approximate |= sec.approximate;
            rows.push(ReportRow {
                zone: zone.id.clone(),
                k,
                econ_security_usd: usd(sec.econ),
                censorship_usd: usd(sec.censor),
                path: sec.path,
                cross_staking_usd: cross.clone(),
            });
        }
    }
    Ok(SecurityReport {
        ps: ps.to_vec(),
        rows,
        approximate,
    })
}

fn cs_column(p: f64) -> String {
    format!("cs_p{}", (p * 100.0).round() as u64)
}

impl SecurityReport {
    /// CSV with one row per (zone, k); the path column joins zone ids with
    /// `|`.
    pub fn to_csv(&self) -> Result<String, MeshError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![
            "zone".to_string(),
            "k".to_string(),
            "econ_security_usd".to_string(),
            "censorship_usd".to_string(),
            "path".to_string(),
        ];
        header.extend(self.ps.iter().map(|&p| cs_column(p)));
        w.write_record(&header).map_err(csv_err)?;
        for row in &self.rows {
            let mut rec = vec![
                row.zone.clone(),
                row.k.to_string(),
                row.econ_security_usd.to_string(),
                row.censorship_usd.to_string(),
                row.path.join("|"),
            ];
            rec.extend(row.cross_staking_usd.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| MeshError::Csv(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| MeshError::Csv(e.to_string()))
    }

    /// Inverse of `to_csv`, up to the `approximate` flag (not serialized).
    pub fn from_csv(text: &str) -> Result<SecurityReport, MeshError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers = r.headers().map_err(csv_err)?.clone();
        let ps: Vec<f64> = headers
            .iter()
            .skip(5)
            .map(|h| {
                h.strip_prefix("cs_p")
                    .and_then(|n| n.parse::<f64>().ok())
                    .map(|n| n / 100.0)
                    .ok_or_else(|| MeshError::Csv(format!("bad cross-staking column {h:?}")))
            })
            .collect::<Result<_, _>>()?;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let field = |i: usize| -> Result<&str, MeshError> {
                rec.get(i)
                    .ok_or_else(|| MeshError::Csv(format!("row too short: {rec:?}")))
            };
            let parse_u64 = |s: &str| {
                s.parse::<u64>()
                    .map_err(|e| MeshError::Csv(format!("{s:?}: {e}")))
            };
            rows.push(ReportRow {
                zone: field(0)?.to_string(),
                k: field(1)?
                    .parse()
                    .map_err(|e| MeshError::Csv(format!("k: {e}")))?,
                econ_security_usd: parse_u64(field(2)?)?,
                censorship_usd: parse_u64(field(3)?)?,
                path: field(4)?.split('|').map(String::from).collect(),
                cross_staking_usd: (5..5 + ps.len())
                    .map(|i| field(i).and_then(|s| parse_u64(s)))
                    .collect::<Result<_, _>>()?,
            });
        }
        Ok(SecurityReport {
            ps,
            rows,
            approximate: false,
        })
    }

    /// Log-scale distribution of economic security at one `k`: counts of
    /// zones per decimal decade.
    pub fn histogram(&self, k: usize) -> Vec<(u32, usize)> {
        let mut bins: BTreeMap<u32, usize> = BTreeMap::new();
        for row in self.rows.iter().filter(|r| r.k == k) {
            let decade = row.econ_security_usd.max(1).ilog10();
            *bins.entry(decade).or_default() += 1;
        }
        bins.into_iter().collect()
    }

    pub fn histogram_csv(&self, k: usize) -> String {
        let mut out = String::from("decade,count\n");
        for (decade, count) in self.histogram(k) {
            out.push_str(&format!("{decade},{count}\n"));
        }
        out
    }
}

fn csv_err(e: csv::Error) -> MeshError {
    MeshError::Csv(e.to_string())
}

/// Deterministic synthetic mesh: `n` zones with Zipf-distributed caps
/// scaled to `total_cap`, fully connected in both directions.
pub fn synthetic_mesh(n: usize, total_cap: f64) -> ZoneGraph {
    let weights: Vec<f64> = (1..=n).map(|r| 1.0 / r as f64).collect();
    let wsum: f64 = weights.iter().sum();
    let zones: Vec<Zone> = weights
        .iter()
        .enumerate()
        .map(|(i, w)| Zone {
            id: format!("zone{i:02}"),
            market_cap: total_cap * w / wsum,
        })
        .collect();
    let mut channels = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                channels.push(Channel {
                    from: zones[i].id.clone(),
                    to: zones[j].id.clone(),
                    transfers_per_hour: 60.0 / (1 + i.abs_diff(j)) as f64,
                });
            }
        }
    }
    ZoneGraph { zones, channels }
}

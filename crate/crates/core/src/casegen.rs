//! Reproducible synthetic networks with capacity-reduction scenarios.
//!
//! Nodes are scattered in the unit square. Undirected corridors are chosen
//! shortest first, skipping any that would cross an earlier one, and each is
//! added in both directions. Every community is a distinct
//! origin-destination pair at most `max_route_len` hops apart. Each community
//! gets one random simple route, and the remaining routes are extra random
//! paths for randomly chosen communities.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fairsolver::{preflight, FairProblem, SolveError, SolverConfig};
use crate::network::{Network, NetworkError};
use crate::riskmeasures::{RiskError, RiskKind, RiskSpec, ScenarioSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaseError {
    #[error("invalid case spec: {0}")]
    InvalidSpec(String),
    #[error("only {achieved} of {requested} non-crossing links fit")]
    TooManyLinks { requested: usize, achieved: usize },
    #[error("only {achieved} origin-destination pairs within {max_len} hops, {requested} communities requested")]
    TooFewPairs {
        requested: usize,
        achieved: usize,
        max_len: usize,
    },
    #[error("could only sample {achieved} distinct routes of {requested}")]
    TooFewRoutes { requested: usize, achieved: usize },
    #[error("reduction probabilities sum to {0}, above 1")]
    ResidualProbability(f64),
    #[error("no feasible case after {0} attempts")]
    Exhausted(usize),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Risk(#[from] RiskError),
}

/// A uniform capacity reduction applied with some probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub fraction: f64,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub seed: u64,
    pub nodes: usize,
    pub links: usize,
    pub routes: usize,
    pub communities: usize,
    pub max_route_len: usize,
    pub node_cap_range: (f64, f64),
    pub link_cap_range: (f64, f64),
    pub reductions: Vec<Reduction>,
    pub max_attempts: usize,
}

impl Default for CaseSpec {
    fn default() -> Self {
        CaseSpec {
            seed: 0,
            nodes: 17,
            links: 72,
            routes: 200,
            communities: 46,
            max_route_len: 5,
            node_cap_range: (50.0, 200.0),
            link_cap_range: (20.0, 100.0),
            reductions: vec![
                Reduction {
                    fraction: 0.2,
                    prob: 0.3,
                },
                Reduction {
                    fraction: 0.4,
                    prob: 0.2,
                },
            ],
            max_attempts: 20,
        }
    }
}

impl CaseSpec {
    pub fn with_seed(seed: u64) -> Self {
        CaseSpec {
            seed,
            ..Default::default()
        }
    }

    /// A small instance (5–6 nodes, 10–12 links, 2–4 communities) whose sizes
    /// are drawn from `seed`.
    pub fn random_small(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5a11);
        let nodes = rng.gen_range(5..=6);
        let communities = rng.gen_range(2..=4);
        CaseSpec {
            seed,
            nodes,
            links: 2 * rng.gen_range(5..=6),
            routes: communities + rng.gen_range(0..=4),
            communities,
            max_route_len: 3,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<(), CaseError> {
        let bad = |m: &str| Err(CaseError::InvalidSpec(m.to_string()));
        if self.nodes < 2 {
            return bad("need at least 2 nodes");
        }
        if self.links == 0 || !self.links.is_multiple_of(2) {
            return bad("link count must be positive and even (links come in opposite pairs)");
        }
        if self.communities == 0 || self.routes < self.communities {
            return bad("need at least one community and one route per community");
        }
        if self.max_route_len == 0 {
            return bad("route length must be at least 1");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive");
        }
        for (lo, hi) in [self.node_cap_range, self.link_cap_range] {
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                return bad("capacity ranges must satisfy 0 < lo <= hi");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub version: String,
    pub seed: u64,
    pub attempts: usize,
    pub spec: CaseSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCase {
    pub network: Network,
    pub scenarios: ScenarioSet,
    pub provenance: Provenance,
}

/// Scales the nominal capacities by `1 − fraction` per rule; the nominal
/// scenario keeps the leftover probability and is dropped if none is left.
pub fn scenario_from_reductions(
    node_caps: &[f64],
    link_caps: &[f64],
    rules: &[Reduction],
) -> Result<ScenarioSet, CaseError> {
    for r in rules {
        if !(0.0..1.0).contains(&r.fraction) {
            return Err(CaseError::InvalidSpec(format!(
                "reduction fraction {} outside [0, 1)",
                r.fraction
            )));
        }
        if !(r.prob.is_finite() && r.prob > 0.0) {
            return Err(CaseError::InvalidSpec(format!(
                "reduction probability {} must be positive",
                r.prob
            )));
        }
    }
    let used: f64 = rules.iter().map(|r| r.prob).sum();
    let residual = 1.0 - used;
    if residual < -1e-12 {
        return Err(CaseError::ResidualProbability(used));
    }
    let mut nodes = Vec::new();
    let mut links = Vec::new();
    let mut probs = Vec::new();
    if residual > 1e-12 {
        nodes.push(node_caps.to_vec());
        links.push(link_caps.to_vec());
        probs.push(residual);
    }
    for r in rules {
        let keep = 1.0 - r.fraction;
        nodes.push(node_caps.iter().map(|c| keep * c).collect());
        links.push(link_caps.iter().map(|d| keep * d).collect());
        probs.push(r.prob);
    }
    Ok(ScenarioSet::new(nodes, links, probs)?)
}

pub fn generate(spec: &CaseSpec) -> Result<GeneratedCase, CaseError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut last_err = None;
    for attempt in 1..=spec.max_attempts {
        match attempt_case(spec, &mut rng) {
            Ok((network, scenarios)) => {
                // the floor must be reachable even without any violation slack
                let risk = RiskSpec::new(RiskKind::Tv, 0.0, 0.0)?;
                let problem = FairProblem::new(
                    network.clone(),
                    scenarios.clone(),
                    risk,
                    1.0,
                    SolverConfig::default(),
                );
                let ok = match problem {
                    Ok(p) => preflight(&p).is_ok(),
                    Err(SolveError::Risk(e)) => return Err(e.into()),
                    Err(_) => false,
                };
                if ok {
                    return Ok(GeneratedCase {
                        network,
                        scenarios,
                        provenance: Provenance {
                            generator: "fairroute-casegen".into(),
                            version: env!("CARGO_PKG_VERSION").into(),
                            seed: spec.seed,
                            attempts: attempt,
                            spec: spec.clone(),
                        },
                    });
                }
            }
            // geometry limits do not change between attempts
            Err(e @ (CaseError::TooManyLinks { .. } | CaseError::InvalidSpec(_))) => return Err(e),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or(CaseError::Exhausted(spec.max_attempts)))
}

fn attempt_case(spec: &CaseSpec, rng: &mut ChaCha8Rng) -> Result<(Network, ScenarioSet), CaseError> {
    let points: Vec<[f64; 2]> = (0..spec.nodes).map(|_| [rng.gen(), rng.gen()]).collect();
    let links = planar_links(&points, spec.links)?;
    let n = spec.nodes;
    let mut out: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (id, &(t, h)) in links.iter().enumerate() {
        out[t].push((h, id));
    }
    let dist: Vec<Vec<usize>> = (0..n).map(|s| bfs_from(&out, s)).collect();

    let mut pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|o| (0..n).map(move |d| (o, d)))
        .filter(|&(o, d)| o != d && dist[o][d] <= spec.max_route_len)
        .collect();
    if pairs.len() < spec.communities {
        return Err(CaseError::TooFewPairs {
            requested: spec.communities,
            achieved: pairs.len(),
            max_len: spec.max_route_len,
        });
    }
    pairs.shuffle(rng);
    pairs.truncate(spec.communities);

    // distances *to* each destination, for pruning
    let mut rev: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (id, &(t, h)) in links.iter().enumerate() {
        rev[h].push((t, id));
    }
    let to: Vec<Vec<usize>> = (0..n).map(|d| bfs_from(&rev, d)).collect();

    let mut routes: Vec<Vec<usize>> = Vec::new();
    let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
    for &(o, d) in &pairs {
        let path = random_path(&out, &to[d], o, d, spec.max_route_len, rng)
            .expect("pair chosen within reach");
        seen.insert(path.clone());
        routes.push(path);
    }
    let mut misses = 0;
    while routes.len() < spec.routes {
        if misses > 50 * spec.routes {
            return Err(CaseError::TooFewRoutes {
                requested: spec.routes,
                achieved: routes.len(),
            });
        }
        let (o, d) = pairs[rng.gen_range(0..pairs.len())];
        let path = if misses < 20 * spec.routes {
            random_path(&out, &to[d], o, d, spec.max_route_len, rng)
        } else {
            random_walk(&out, o, spec.max_route_len, rng)
        };
        match path {
            Some(p) if seen.insert(p.clone()) => routes.push(p),
            _ => misses += 1,
        }
    }

    let route_communities: Vec<Vec<usize>> = routes
        .iter()
        .map(|r| {
            let o = links[r[0]].0;
            let d = links[*r.last().expect("routes are nonempty")].1;
            let exact: Vec<usize> = (0..pairs.len()).filter(|&k| pairs[k] == (o, d)).collect();
            if exact.is_empty() {
                (0..pairs.len()).filter(|&k| pairs[k].0 == o).collect()
            } else {
                exact
            }
        })
        .collect();

    let node_caps: Vec<f64> = (0..n)
        .map(|_| rng.gen_range(spec.node_cap_range.0..=spec.node_cap_range.1))
        .collect();
    let link_caps: Vec<f64> = (0..links.len())
        .map(|_| rng.gen_range(spec.link_cap_range.0..=spec.link_cap_range.1))
        .collect();
    let scenarios = scenario_from_reductions(&node_caps, &link_caps, &spec.reductions)?;
    let mut network = Network::new(n, links, routes, spec.communities, route_communities)?;
    network.coordinates = Some(points);
    Ok((network, scenarios))
}

/// Shortest-first non-crossing corridors, each as two opposite links.
fn planar_links(points: &[[f64; 2]], count: usize) -> Result<Vec<(usize, usize)>, CaseError> {
    let n = points.len();
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let dx = points[a][0] - points[b][0];
            let dy = points[a][1] - points[b][1];
            cand.push((dx * dx + dy * dy, a, b));
        }
    }
    cand.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let mut chosen: Vec<(usize, usize)> = Vec::new();
    for &(_, a, b) in &cand {
        if 2 * chosen.len() >= count {
            break;
        }
        let clash = chosen
            .iter()
            .any(|&(c, d)| segments_cross(points[a], points[b], points[c], points[d]));
        if !clash {
            chosen.push((a, b));
        }
    }
    if 2 * chosen.len() < count {
        return Err(CaseError::TooManyLinks {
            requested: count,
            achieved: 2 * chosen.len(),
        });
    }
    Ok(chosen.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect())
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

/// True when segments `ab` and `cd` share any point other than a common
/// endpoint.
pub fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let shared = [a, b].iter().filter(|p| **p == c || **p == d).count();
    if shared == 2 {
        return true;
    }
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if shared == 1 {
        // touching at one endpoint only counts when the segments overlap
        let (p, q) = if a == c || a == d { (a, b) } else { (b, a) };
        let r = if p == c { d } else { c };
        let along = (q[0] - p[0]) * (r[0] - p[0]) + (q[1] - p[1]) * (r[1] - p[1]);
        return orient(p, q, r) == 0.0 && along > 0.0;
    }
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

fn bfs_from(adj: &[Vec<(usize, usize)>], start: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    dist[start] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        for &(v, _) in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Random simple path `o → d` with at most `max_len` links, by randomized
/// depth-first search pruned with hop distances to `d`.
fn random_path(
    out: &[Vec<(usize, usize)>],
    to_d: &[usize],
    o: usize,
    d: usize,
    max_len: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<usize>> {
    fn dfs(
        out: &[Vec<(usize, usize)>],
        to_d: &[usize],
        u: usize,
        d: usize,
        budget: usize,
        visited: &mut Vec<bool>,
        path: &mut Vec<usize>,
        rng: &mut ChaCha8Rng,
    ) -> bool {
        if u == d {
            return true;
        }
        let mut next: Vec<(usize, usize)> = out[u]
            .iter()
            .copied()
            .filter(|&(v, _)| !visited[v] && to_d[v] < budget)
            .collect();
        next.shuffle(rng);
        for (v, link) in next {
            visited[v] = true;
            path.push(link);
            if dfs(out, to_d, v, d, budget - 1, visited, path, rng) {
                return true;
            }
            path.pop();
            visited[v] = false;
        }
        false
    }
    if to_d[o] > max_len {
        return None;
    }
    let mut visited = vec![false; out.len()];
    visited[o] = true;
    let mut path = Vec::new();
    dfs(out, to_d, o, d, max_len, &mut visited, &mut path, rng).then_some(path)
}

/// Random simple walk from `o` with 1 to `max_len` links.
fn random_walk(
    out: &[Vec<(usize, usize)>],
    o: usize,
    max_len: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<usize>> {
    let len = rng.gen_range(1..=max_len);
    let mut visited = vec![false; out.len()];
    visited[o] = true;
    let mut u = o;
    let mut path = Vec::new();
    for _ in 0..len {
        let next: Vec<&(usize, usize)> = out[u].iter().filter(|(v, _)| !visited[*v]).collect();
        let &&(v, link) = next.choose(rng)?;
        visited[v] = true;
        path.push(link);
        u = v;
    }
    Some(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reductions_match_worked_example() {
        let rules = CaseSpec::default().reductions;
        let s = scenario_from_reductions(&[10.0], &[20.0], &rules).unwrap();
        assert_eq!(s.probs, vec![0.5, 0.3, 0.2]);
        assert_eq!(s.node_caps, vec![vec![10.0], vec![8.0], vec![6.0]]);
        assert_eq!(s.link_caps, vec![vec![20.0], vec![16.0], vec![12.0]]);
        let nominal = scenario_from_reductions(&[10.0], &[20.0], &[]).unwrap();
        assert_eq!(nominal.probs, vec![1.0]);
        let over = [Reduction { fraction: 0.2, prob: 0.7 }, Reduction { fraction: 0.4, prob: 0.4 }];
        assert!(matches!(
            scenario_from_reductions(&[10.0], &[20.0], &over),
            Err(CaseError::ResidualProbability(_))
        ));
        let bad = [Reduction { fraction: 1.0, prob: 0.1 }];
        assert!(scenario_from_reductions(&[10.0], &[20.0], &bad).is_err());
    }

    #[test]
    fn crossing_test() {
        let (a, b, c, d) = ([0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]);
        assert!(segments_cross(a, b, c, d));
        assert!(!segments_cross(a, c, b, d));
        // shared endpoint only
        assert!(!segments_cross(a, b, a, c));
        // collinear overlap through a shared endpoint
        assert!(segments_cross(a, [2.0, 2.0], a, b));
        // T junction
        assert!(segments_cross([0.0, 0.0], [2.0, 0.0], [1.0, 0.0], [1.0, 1.0]));
    }

    #[test]
    fn too_many_links_reports_count() {
        let spec = CaseSpec {
            nodes: 4,
            links: 20,
            routes: 2,
            communities: 2,
            ..Default::default()
        };
        match generate(&spec) {
            Err(CaseError::TooManyLinks { requested: 20, achieved }) => assert!(achieved <= 12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn small_case_is_valid() {
        let spec = CaseSpec {
            seed: 3,
            nodes: 6,
            links: 12,
            routes: 8,
            communities: 4,
            ..Default::default()
        };
        let case = generate(&spec).unwrap();
        assert_eq!(case.network.node_count, 6);
        assert_eq!(case.network.link_count(), 12);
        assert_eq!(case.network.route_count(), 8);
        assert_eq!(case.scenarios.len(), 3);
    }
}

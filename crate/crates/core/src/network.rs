//! Directed transport graph, routes, communities and incidence matrices.
//!
//! Ids are 0-based everywhere inside the crate. File formats use 1-based ids
//! and convert at the boundary (see [`crate::io`]); violation messages are
//! rendered with 1-based ids so they match what a user wrote.

use std::fmt;

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid network: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

/// A directed graph with an explicit route list and route-to-community map.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub node_count: usize,
    /// `(tail, head)` per link.
    pub links: Vec<(usize, usize)>,
    /// Link ids per route, in travel order.
    pub routes: Vec<Vec<usize>>,
    pub community_count: usize,
    /// Communities served by each route, index-aligned with `routes`.
    pub route_communities: Vec<Vec<usize>>,
    /// Planar node positions; only used for export.
    pub coordinates: Option<Vec<[f64; 2]>>,
}

impl Network {
    /// Builds a network and rejects it unless [`validate_network`] is clean.
    pub fn new(
        node_count: usize,
        links: Vec<(usize, usize)>,
        routes: Vec<Vec<usize>>,
        community_count: usize,
        route_communities: Vec<Vec<usize>>,
    ) -> Result<Self, NetworkError> {
        let net = Network {
            node_count,
            links,
            routes,
            community_count,
            route_communities,
            coordinates: None,
        };
        let violations = validate_network(&net);
        if violations.is_empty() {
            Ok(net)
        } else {
            Err(NetworkError::Invalid(violations))
        }
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn route_count(&self) -> usize {
        self.routes.len()
    }

    /// Tail of the first link of `route`.
    pub fn route_origin(&self, route: usize) -> usize {
        self.links[self.routes[route][0]].0
    }

    /// Head of the last link of `route`.
    pub fn route_destination(&self, route: usize) -> usize {
        let last = *self.routes[route].last().expect("validated route is non-empty");
        self.links[last].1
    }
}

/// One broken network invariant. Ids are stored 0-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NoNodes,
    NoLinks,
    NoRoutes,
    NoCommunities,
    SelfLoop { link: usize },
    LinkNodeOutOfRange { link: usize, node: usize },
    EmptyRoute { route: usize },
    RouteLinkOutOfRange { route: usize, link: usize },
    /// The link at `position` does not start where the previous one ended.
    RouteNotConnected { route: usize, position: usize },
    RouteCommunityCount { routes: usize, entries: usize },
    RouteWithoutCommunity { route: usize },
    CommunityOutOfRange { route: usize, community: usize },
    CommunityUnserved { community: usize },
    CoordinateCount { expected: usize, got: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match *self {
            NoNodes => write!(f, "network has no nodes"),
            NoLinks => write!(f, "network has no links"),
            NoRoutes => write!(f, "network has no routes"),
            NoCommunities => write!(f, "network has no communities"),
            SelfLoop { link } => write!(f, "link {}: self-loop link", link + 1),
            LinkNodeOutOfRange { link, node } => {
                write!(f, "link {}: node {} out of range", link + 1, node + 1)
            }
            EmptyRoute { route } => write!(f, "route {}: empty route", route + 1),
            RouteLinkOutOfRange { route, link } => {
                write!(f, "route {}: link {} out of range", route + 1, link + 1)
            }
            RouteNotConnected { route, position } => write!(
                f,
                "route {}: route not head-to-tail at position {}",
                route + 1,
                position + 1
            ),
            RouteCommunityCount { routes, entries } => write!(
                f,
                "route_communities has {entries} entries for {routes} routes"
            ),
            RouteWithoutCommunity { route } => {
                write!(f, "route {}: serves no community", route + 1)
            }
            CommunityOutOfRange { route, community } => write!(
                f,
                "route {}: community {} out of range",
                route + 1,
                community + 1
            ),
            CommunityUnserved { community } => {
                write!(f, "community {}: served by no route", community + 1)
            }
            CoordinateCount { expected, got } => {
                write!(f, "expected {expected} node coordinates, got {got}")
            }
        }
    }
}

/// Lists every broken invariant; an empty list means the network is usable.
pub fn validate_network(net: &Network) -> Vec<Violation> {
    let mut out = Vec::new();
    if net.node_count == 0 {
        out.push(Violation::NoNodes);
    }
    if net.links.is_empty() {
        out.push(Violation::NoLinks);
    }
    if net.routes.is_empty() {
        out.push(Violation::NoRoutes);
    }
    if net.community_count == 0 {
        out.push(Violation::NoCommunities);
    }
    for (l, &(tail, head)) in net.links.iter().enumerate() {
        for node in [tail, head] {
            if node >= net.node_count {
                out.push(Violation::LinkNodeOutOfRange { link: l, node });
            }
        }
        if tail == head {
            out.push(Violation::SelfLoop { link: l });
        }
    }
    for (r, route) in net.routes.iter().enumerate() {
        if route.is_empty() {
            out.push(Violation::EmptyRoute { route: r });
            continue;
        }
        let mut prev_head: Option<usize> = None;
        for (pos, &l) in route.iter().enumerate() {
            let Some(&(tail, head)) = net.links.get(l) else {
                out.push(Violation::RouteLinkOutOfRange { route: r, link: l });
                prev_head = None;
                continue;
            };
            if let Some(h) = prev_head {
                if h != tail {
                    out.push(Violation::RouteNotConnected { route: r, position: pos });
                }
            }
            prev_head = Some(head);
        }
    }
    if net.route_communities.len() != net.routes.len() {
        out.push(Violation::RouteCommunityCount {
            routes: net.routes.len(),
            entries: net.route_communities.len(),
        });
    }
    let mut served = vec![false; net.community_count];
    for (r, comms) in net.route_communities.iter().enumerate() {
        if comms.is_empty() {
            out.push(Violation::RouteWithoutCommunity { route: r });
        }
        for &k in comms {
            match served.get_mut(k) {
                Some(s) => *s = true,
                None => out.push(Violation::CommunityOutOfRange { route: r, community: k }),
            }
        }
    }
    for (k, s) in served.iter().enumerate() {
        if !s {
            out.push(Violation::CommunityUnserved { community: k });
        }
    }
    if let Some(coords) = &net.coordinates {
        if coords.len() != net.node_count {
            out.push(Violation::CoordinateCount {
                expected: net.node_count,
                got: coords.len(),
            });
        }
    }
    out
}

/// Node-link (`e`), link-route (`f`), community-route (`h`) incidence and the
/// head-weighting matrix `k = max(e, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceMatrices {
    pub e: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub k: DMatrix<f64>,
}

/// Assumes `net` passed [`validate_network`].
pub fn build_incidence(net: &Network) -> IncidenceMatrices {
    let (nn, nl, nr, nc) = (
        net.node_count,
        net.link_count(),
        net.route_count(),
        net.community_count,
    );
    let mut e = DMatrix::zeros(nn, nl);
    for (l, &(tail, head)) in net.links.iter().enumerate() {
        e[(head, l)] = 1.0;
        e[(tail, l)] = -1.0;
    }
    let mut f = DMatrix::zeros(nl, nr);
    for (r, route) in net.routes.iter().enumerate() {
        for &l in route {
            f[(l, r)] = 1.0;
        }
    }
    let mut h = DMatrix::zeros(nc, nr);
    for (r, comms) in net.route_communities.iter().enumerate() {
        for &k in comms {
            h[(k, r)] = 1.0;
        }
    }
    let k = e.map(|v: f64| v.max(0.0));
    IncidenceMatrices { e, f, h, k }
}

/// Net inflow `E y` at every node; zero everywhere for a balanced flow.
pub fn residual_balance(e: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>, NetworkError> {
    if y.len() != e.ncols() {
        return Err(NetworkError::DimensionMismatch {
            expected: e.ncols(),
            got: y.len(),
        });
    }
    Ok(mat_vec(e, y))
}

pub(crate) fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.nrows()];
    for (j, &vj) in v.iter().enumerate() {
        if vj == 0.0 {
            continue;
        }
        for (i, o) in out.iter_mut().enumerate() {
            let a = m[(i, j)];
            if a != 0.0 {
                *o += a * vj;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node() -> Network {
        Network::new(2, vec![(0, 1), (1, 0)], vec![vec![0], vec![0, 1]], 1, vec![vec![0], vec![0]])
            .unwrap()
    }

    #[test]
    fn single_link_columns() {
        let net = Network::new(2, vec![(0, 1)], vec![vec![0]], 1, vec![vec![0]]).unwrap();
        let m = build_incidence(&net);
        assert_eq!(m.e.column(0).as_slice(), &[-1.0, 1.0]);
        assert_eq!(m.k.column(0).as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn route_column_of_f() {
        // chain 1->2->...->7; the route uses links 3 and 5 (1-based), which do
        // not chain, so build the matrix from an unchecked network.
        let links: Vec<_> = (0..6).map(|i| (i, i + 1)).collect();
        let net = Network {
            node_count: 7,
            links,
            routes: vec![vec![2, 4]],
            community_count: 1,
            route_communities: vec![vec![0]],
            coordinates: None,
        };
        let m = build_incidence(&net);
        let col: Vec<f64> = m.f.column(0).iter().copied().collect();
        assert_eq!(col, vec![0.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn community_column_of_h() {
        let net = Network::new(2, vec![(0, 1)], vec![vec![0]], 3, vec![vec![1]]);
        // communities 1 and 3 unserved
        assert!(net.is_err());
        let net = Network {
            node_count: 2,
            links: vec![(0, 1)],
            routes: vec![vec![0]],
            community_count: 3,
            route_communities: vec![vec![1]],
            coordinates: None,
        };
        let m = build_incidence(&net);
        assert_eq!(m.h.column(0).as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn well_formed_network_has_empty_report() {
        assert!(validate_network(&two_node()).is_empty());
    }

    #[test]
    fn broken_chain_is_reported_at_second_position() {
        let net = Network {
            node_count: 4,
            links: vec![(0, 1), (2, 3)],
            routes: vec![vec![0, 1]],
            community_count: 1,
            route_communities: vec![vec![0]],
            coordinates: None,
        };
        let v = validate_network(&net);
        assert_eq!(v, vec![Violation::RouteNotConnected { route: 0, position: 1 }]);
        assert_eq!(v[0].to_string(), "route 1: route not head-to-tail at position 2");
    }

    #[test]
    fn self_loop_is_reported() {
        let net = Network {
            node_count: 4,
            links: vec![(3, 3)],
            routes: vec![vec![0]],
            community_count: 1,
            route_communities: vec![vec![0]],
            coordinates: None,
        };
        let v = validate_network(&net);
        assert!(v.contains(&Violation::SelfLoop { link: 0 }));
        assert!(v.iter().any(|x| x.to_string().contains("self-loop link")));
    }

    #[test]
    fn community_coverage_and_ranges() {
        let net = Network {
            node_count: 2,
            links: vec![(0, 1)],
            routes: vec![vec![0], vec![5]],
            community_count: 2,
            route_communities: vec![vec![0], vec![]],
            coordinates: Some(vec![[0.0, 0.0]]),
        };
        let v = validate_network(&net);
        assert!(v.contains(&Violation::RouteLinkOutOfRange { route: 1, link: 5 }));
        assert!(v.contains(&Violation::RouteWithoutCommunity { route: 1 }));
        assert!(v.contains(&Violation::CommunityUnserved { community: 1 }));
        assert!(v.contains(&Violation::CoordinateCount { expected: 2, got: 1 }));
    }

    #[test]
    fn balance_examples() {
        let net = two_node();
        let m = build_incidence(&net);
        assert_eq!(residual_balance(&m.e, &[3.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(residual_balance(&m.e, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let path = Network::new(2, vec![(0, 1)], vec![vec![0]], 1, vec![vec![0]]).unwrap();
        let m = build_incidence(&path);
        assert_eq!(residual_balance(&m.e, &[3.0]).unwrap(), vec![-3.0, 3.0]);
        assert_eq!(
            residual_balance(&m.e, &[1.0, 2.0]),
            Err(NetworkError::DimensionMismatch { expected: 1, got: 2 })
        );
    }

    #[test]
    fn column_sums_and_head_flow_identity() {
        let net = Network::new(
            3,
            vec![(0, 1), (1, 2), (2, 0), (1, 0)],
            vec![vec![0, 1, 2], vec![3]],
            2,
            vec![vec![0], vec![1, 0]],
        )
        .unwrap();
        let m = build_incidence(&net);
        for j in 0..4 {
            assert_eq!(m.e.column(j).sum(), 0.0);
            assert_eq!(m.k.column(j).sum(), 1.0);
        }
        let y = [0.5, 1.25, 2.0, 7.0];
        let ky = mat_vec(&m.k, &y);
        assert!((ky.iter().sum::<f64>() - y.iter().sum::<f64>()).abs() < 1e-12);
        assert_eq!(build_incidence(&net), m);
    }
}

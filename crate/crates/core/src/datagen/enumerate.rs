//! Choice-set enumeration: depth-first search over line legs with a
//! lower-bound prune, keeping the fastest routes of each category.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{SyntheticNetwork, TransitMode};
use crate::types::{Landuse, LinkId, NodeId, Route, RouteCategory, ROUTES_PER_CATEGORY};

/// Distance-based fare: flat base fare up to `base_km`, then linear, capped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FareTariff {
    pub base_cents: u32,
    pub base_km: f64,
    pub cents_per_km: f64,
    pub cap_cents: u32,
}

impl Default for FareTariff {
    fn default() -> Self {
        FareTariff {
            base_cents: 92,
            base_km: 3.2,
            cents_per_km: 6.0,
            cap_cents: 250,
        }
    }
}

impl FareTariff {
    pub fn fare_cents(&self, distance_m: f64) -> u32 {
        let extra = (distance_m / 1000.0 - self.base_km).max(0.0) * self.cents_per_km;
        (self.base_cents + extra.round() as u32).min(self.cap_cents.max(self.base_cents))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnumerationRules {
    pub max_transfers: u32,
    pub max_journey_seconds: u32,
    pub max_transfer_walk_seconds: u32,
    pub per_category: usize,
    pub tariff: FareTariff,
}

impl Default for EnumerationRules {
    fn default() -> Self {
        EnumerationRules {
            max_transfers: 5,
            max_journey_seconds: 2 * 3600,
            max_transfer_walk_seconds: 45 * 60,
            per_category: ROUTES_PER_CATEGORY,
            tariff: FareTariff::default(),
        }
    }
}

/// Ranking key: journey time, then transfers, then link sequence.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct RankKey {
    journey: u32,
    transfers: u32,
    links: Vec<LinkId>,
}

#[derive(Debug, Clone)]
struct Candidate {
    key: RankKey,
    ivtt: u32,
    walk: u32,
    distance_m: f64,
    link_costs: Vec<f64>,
    transfer_stops: Vec<NodeId>,
}

impl PartialEq for Candidate {
    fn eq(&self, o: &Self) -> bool {
        self.key == o.key
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Candidate {
    fn cmp(&self, o: &Self) -> Ordering {
        self.key.cmp(&o.key)
    }
}

/// Mode pattern of the legs taken so far, consecutive equal modes collapsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pattern {
    Bus { legs: u32 },
    Rail,
    BusRail,
    RailBus,
    BusRailBus,
}

impl Pattern {
    fn start(mode: TransitMode) -> Pattern {
        match mode {
            TransitMode::Bus => Pattern::Bus { legs: 1 },
            TransitMode::Rail => Pattern::Rail,
        }
    }

    fn extend(self, mode: TransitMode) -> Option<Pattern> {
        use TransitMode::*;
        match (self, mode) {
            (Pattern::Bus { legs }, Bus) => Some(Pattern::Bus { legs: legs + 1 }),
            (Pattern::Bus { .. }, Rail) => Some(Pattern::BusRail),
            (Pattern::Rail, Rail) => Some(Pattern::Rail),
            (Pattern::Rail, Bus) => Some(Pattern::RailBus),
            (Pattern::BusRail, Rail) => Some(Pattern::BusRail),
            (Pattern::BusRail, Bus) => Some(Pattern::BusRailBus),
            (Pattern::RailBus, Bus) => Some(Pattern::RailBus),
            (Pattern::BusRailBus, Bus) => Some(Pattern::BusRailBus),
            _ => None,
        }
    }

    fn category(self) -> RouteCategory {
        match self {
            Pattern::Bus { legs: 1 } => RouteCategory::Bus,
            Pattern::Bus { .. } => RouteCategory::BusBus,
            Pattern::Rail => RouteCategory::Rail,
            Pattern::BusRail => RouteCategory::BusRail,
            Pattern::RailBus => RouteCategory::RailBus,
            Pattern::BusRailBus => RouteCategory::BusRailBus,
        }
    }

    /// Categories a completed extension of this pattern can land in.
    fn reachable(self) -> &'static [RouteCategory] {
        use RouteCategory as C;
        match self {
            Pattern::Bus { legs: 1 } => &[C::Bus, C::BusBus, C::BusRail, C::BusRailBus],
            Pattern::Bus { .. } => &[C::BusBus, C::BusRail, C::BusRailBus],
            Pattern::Rail => &[C::Rail, C::RailBus],
            Pattern::BusRail => &[C::BusRail, C::BusRailBus],
            Pattern::RailBus => &[C::RailBus],
            Pattern::BusRailBus => &[C::BusRailBus],
        }
    }
}

/// Per-network lookup tables shared by all OD searches.
pub struct RouteIndex<'a> {
    net: &'a SyntheticNetwork,
    /// (line, position) pairs serving each node.
    serving: Vec<Vec<(u32, u32)>>,
    /// Walk transfers reachable from each node (including itself).
    walks: Vec<Vec<(NodeId, u32)>>,
    /// Edge ids along each line: `forward[k]` goes stop k -> k+1.
    forward: Vec<Vec<LinkId>>,
    backward: Vec<Vec<LinkId>>,
    /// Reverse adjacency per mode: `into[mode][to]` lists (from, seconds).
    into: [Vec<Vec<(usize, u32)>>; 2],
}

impl<'a> RouteIndex<'a> {
    pub fn new(net: &'a SyntheticNetwork) -> Self {
        let n = net.nodes.len();
        let mut serving = vec![Vec::new(); n];
        for (li, line) in net.lines.iter().enumerate() {
            for (k, s) in line.stops.iter().enumerate() {
                serving[s.0 as usize].push((li as u32, k as u32));
            }
        }
        let mut walks = vec![Vec::new(); n];
        for p in &net.transfer_pairs {
            walks[p.a.0 as usize].push((p.b, p.walk_seconds));
            if p.a != p.b {
                walks[p.b.0 as usize].push((p.a, p.walk_seconds));
            }
        }
        for w in walks.iter_mut() {
            w.sort();
        }
        let mut forward = vec![Vec::new(); net.lines.len()];
        let mut backward = vec![Vec::new(); net.lines.len()];
        for (li, line) in net.lines.iter().enumerate() {
            for w in line.stops.windows(2) {
                let find = |a: NodeId, b: NodeId| {
                    net.edges
                        .iter()
                        .find(|e| e.line == li as u32 && e.from == a && e.to == b)
                        .map(|e| e.id)
                        .expect("generated network has both directions")
                };
                forward[li].push(find(w[0], w[1]));
                backward[li].push(find(w[1], w[0]));
            }
        }
        let mut into = [vec![Vec::new(); n], vec![Vec::new(); n]];
        for e in &net.edges {
            into[e.mode as usize][e.to.0 as usize].push((e.from.0 as usize, e.seconds));
        }
        RouteIndex {
            net,
            serving,
            walks,
            forward,
            backward,
            into,
        }
    }

    /// Cheapest time to `dest` from every node, standing there after a
    /// ride, along paths whose legs follow the mode `phases` in order. A
    /// required phase rides at least one edge of its mode. Transfers are
    /// single walks (or same-stop changes) and the path ends with a ride.
    fn phase_bounds(&self, dest: NodeId, phases: &[(TransitMode, bool)]) -> Vec<u32> {
        let n = self.net.nodes.len();
        let mut next = vec![u32::MAX; n];
        next[dest.0 as usize] = 0;
        for &(mode, required) in phases.iter().rev() {
            let done = self.ride_or_walk(next, mode);
            if !required {
                next = done;
                continue;
            }
            // first edge of the phase, optionally after one walk
            let mut board = vec![u32::MAX; n];
            for (v, list) in self.into[mode as usize].iter().enumerate() {
                if done[v] == u32::MAX {
                    continue;
                }
                for &(u, w) in list {
                    board[u] = board[u].min(done[v] + w);
                }
            }
            next = board.clone();
            for (v, list) in self.walks.iter().enumerate() {
                for &(u, w) in list {
                    let b = board[u.0 as usize];
                    if b != u32::MAX {
                        next[v] = next[v].min(b + w);
                    }
                }
            }
        }
        next
    }

    /// Reverse Dijkstra over (node, arrived-by-ride | arrived-by-walk) states
    /// using edges of `mode`; `terminal` holds the cost of handing over to
    /// whatever follows at each node.
    fn ride_or_walk(&self, terminal: Vec<u32>, mode: TransitMode) -> Vec<u32> {
        use std::cmp::Reverse;
        let n = terminal.len();
        let mut rode = terminal;
        let mut walked = vec![u32::MAX; n];
        let mut heap: BinaryHeap<Reverse<(u32, usize, bool)>> = rode
            .iter()
            .enumerate()
            .filter(|(_, d)| **d != u32::MAX)
            .map(|(v, d)| Reverse((*d, v, true)))
            .collect();
        while let Some(Reverse((d, u, by_ride))) = heap.pop() {
            if by_ride {
                if d > rode[u] {
                    continue;
                }
                for &(v, w) in &self.into[mode as usize][u] {
                    let nd = d.saturating_add(w);
                    if nd < rode[v] {
                        rode[v] = nd;
                        heap.push(Reverse((nd, v, true)));
                    }
                    if nd < walked[v] {
                        walked[v] = nd;
                        heap.push(Reverse((nd, v, false)));
                    }
                }
            } else {
                if d > walked[u] {
                    continue;
                }
                for &(v, w) in &self.walks[u] {
                    let v = v.0 as usize;
                    let nd = d.saturating_add(w);
                    if nd < rode[v] {
                        rode[v] = nd;
                        heap.push(Reverse((nd, v, true)));
                    }
                }
            }
        }
        rode
    }

    /// Fastest single-line bus ride between two stops.
    fn direct_bus(&self, o: NodeId, d: NodeId) -> u32 {
        let mut best = u32::MAX;
        for &(line, po) in &self.serving[o.0 as usize] {
            if self.net.lines[line as usize].mode != TransitMode::Bus {
                continue;
            }
            for &(l2, pd) in &self.serving[d.0 as usize] {
                if l2 != line {
                    continue;
                }
                let (lo, hi) = (po.min(pd) as usize, po.max(pd) as usize);
                let t: u32 = self.forward[line as usize][lo..hi]
                    .iter()
                    .map(|e| self.net.edges[e.0 as usize].seconds)
                    .sum();
                best = best.min(t);
            }
        }
        best
    }

    fn bounds(&self, dest: NodeId) -> Bounds {
        use TransitMode::{Bus, Rail};
        Bounds {
            bus: self.phase_bounds(dest, &[(Bus, false)]),
            rail: self.phase_bounds(dest, &[(Rail, false)]),
            rail_bus: self.phase_bounds(dest, &[(Rail, false), (Bus, true)]),
            bus_rail: self.phase_bounds(dest, &[(Bus, false), (Rail, true)]),
            bus_rail_bus: self.phase_bounds(dest, &[(Bus, false), (Rail, true), (Bus, true)]),
            direct_bus: u32::MAX,
        }
    }

    pub fn enumerate(&self, od: (NodeId, NodeId), rules: &EnumerationRules) -> Vec<Route> {
        let (o, d) = od;
        let n = self.net.nodes.len();
        if o == d || o.0 as usize >= n || d.0 as usize >= n {
            return Vec::new();
        }
        let mut lb = self.bounds(d);
        lb.direct_bus = self.direct_bus(o, d);
        let mut search = Search {
            idx: self,
            rules,
            dest: d,
            lb,
            best: vec![BinaryHeap::new(); RouteCategory::ALL.len()],
            done: [false; 6],
            threshold: 0,
            visited: vec![false; n],
            line_used: vec![false; self.net.lines.len()],
            links: Vec::new(),
            costs: Vec::new(),
            transfer_stops: Vec::new(),
        };
        search.visited[o.0 as usize] = true;
        // categories no first leg can lead to are settled from the start
        let starts: Vec<Pattern> = self.serving[o.0 as usize]
            .iter()
            .map(|&(line, _)| Pattern::start(self.net.lines[line as usize].mode))
            .collect();
        let mut base = u32::MAX;
        for c in RouteCategory::ALL {
            let lb = starts
                .iter()
                .filter(|p| p.reachable().contains(&c))
                .map(|&p| search.lb.at_origin(o, p, c, d))
                .min()
                .unwrap_or(u32::MAX);
            search.done[c.index()] = lb == u32::MAX;
            base = base.min(lb);
        }
        // Deepen the journey-time threshold until every open category holds
        // its full quota within it (then no faster route was missed) or the
        // threshold reaches the journey cap.
        let cap = rules.max_journey_seconds;
        let mut slack = 600u32;
        while search.done.iter().any(|d| !d) {
            let threshold = base.saturating_add(slack).min(cap);
            search.threshold = threshold;
            for (c, heap) in search.best.iter_mut().enumerate() {
                if !search.done[c] {
                    heap.clear();
                }
            }
            for &(line, pos) in &self.serving[o.0 as usize] {
                let mode = self.net.lines[line as usize].mode;
                search.ride(line, pos, Pattern::start(mode), 0, 0, 0.0);
            }
            for c in 0..RouteCategory::ALL.len() {
                let heap = &search.best[c];
                let full = heap.len() >= rules.per_category && heap.peek().is_some_and(|w| w.key.journey <= threshold);
                if full || threshold >= cap {
                    search.done[c] = true;
                }
            }
            slack = slack.saturating_mul(2);
        }

        let origin = self.net.nodes[o.0 as usize].landuse;
        let dest = self.net.nodes[d.0 as usize].landuse;
        let mut out = Vec::new();
        for (ci, heap) in search.best.into_iter().enumerate() {
            let mut list = heap.into_vec();
            list.sort();
            for c in list {
                out.push(self.to_route(c, RouteCategory::ALL[ci], origin, dest, rules));
            }
        }
        out
    }

    fn to_route(
        &self,
        c: Candidate,
        category: RouteCategory,
        origin: Landuse,
        dest: Landuse,
        rules: &EnumerationRules,
    ) -> Route {
        let transfer = self.net.mean_landuse(&c.transfer_stops);
        Route {
            ivtt_seconds: c.ivtt,
            fare_cents: rules.tariff.fare_cents(c.distance_m),
            walk_transfer_seconds: c.walk,
            num_transfers: c.key.transfers,
            links: c.key.links,
            link_costs: c.link_costs,
            category,
            origin_landuse: origin,
            dest_landuse: dest,
            transfer_landuse: transfer,
            transfer_stops: c.transfer_stops,
        }
    }
}

/// Remaining-time lower bounds per node, one array per suffix mode pattern.
struct Bounds {
    bus: Vec<u32>,
    rail: Vec<u32>,
    rail_bus: Vec<u32>,
    bus_rail: Vec<u32>,
    bus_rail_bus: Vec<u32>,
    /// Exact time of the fastest one-leg bus route from the origin.
    direct_bus: u32,
}

impl Bounds {
    /// Lower bound for finishing in category `target` from `node`, having
    /// ridden legs matching `pattern` so far.
    fn remaining(&self, node: NodeId, pattern: Pattern, target: RouteCategory, dest: NodeId) -> u32 {
        use RouteCategory as C;
        let v = node.0 as usize;
        match (pattern, target) {
            (Pattern::Bus { legs: 1 }, C::Bus) => {
                if node == dest {
                    0
                } else {
                    u32::MAX
                }
            }
            (Pattern::Bus { .. }, C::BusBus) | (Pattern::RailBus, _) | (Pattern::BusRailBus, _) => self.bus[v],
            (Pattern::Bus { .. }, C::BusRail) => self.bus_rail[v],
            (Pattern::Bus { .. }, C::BusRailBus) => self.bus_rail_bus[v],
            (Pattern::Rail, C::Rail) | (Pattern::BusRail, C::BusRail) => self.rail[v],
            (Pattern::Rail, C::RailBus) | (Pattern::BusRail, C::BusRailBus) => self.rail_bus[v],
            _ => u32::MAX,
        }
    }
}

impl Bounds {
    /// Lower bound at the origin before the first leg is ridden.
    fn at_origin(&self, origin: NodeId, start: Pattern, target: RouteCategory, dest: NodeId) -> u32 {
        if target == RouteCategory::Bus {
            return self.direct_bus;
        }
        self.remaining(origin, start, target, dest)
    }
}

struct Search<'i, 'a> {
    idx: &'i RouteIndex<'a>,
    rules: &'i EnumerationRules,
    dest: NodeId,
    lb: Bounds,
    /// Max-heaps of the best candidates per category.
    best: Vec<BinaryHeap<Candidate>>,
    /// Categories whose kept set is final.
    done: [bool; 6],
    /// Journey-time bound of the current deepening pass.
    threshold: u32,
    visited: Vec<bool>,
    line_used: Vec<bool>,
    links: Vec<LinkId>,
    costs: Vec<f64>,
    transfer_stops: Vec<NodeId>,
}

impl Search<'_, '_> {
    /// True when no route through `node` at elapsed time `t` can enter the
    /// kept set of any category reachable from `pattern`.
    fn hopeless(&self, node: NodeId, t: u32, pattern: Pattern) -> bool {
        pattern.reachable().iter().all(|&c| {
            if self.done[c.index()] {
                return true;
            }
            let lb = self.lb.remaining(node, pattern, c, self.dest);
            if lb == u32::MAX {
                return true;
            }
            let bound = t.saturating_add(lb);
            let heap = &self.best[c.index()];
            bound > self.threshold
                || (heap.len() >= self.rules.per_category && heap.peek().is_some_and(|w| bound > w.key.journey))
        })
    }

    fn ride(&mut self, line: u32, pos: u32, pattern: Pattern, ivtt: u32, walk: u32, dist: f64) {
        self.line_used[line as usize] = true;
        let idx = self.idx;
        let stops = &idx.net.lines[line as usize].stops;
        for dir in [1i64, -1] {
            let mut k = pos as i64;
            let (mut t, mut d) = (ivtt, dist);
            let depth = self.links.len();
            let mut marked = Vec::new();
            loop {
                let next = k + dir;
                if next < 0 || next as usize >= stops.len() {
                    break;
                }
                let node = stops[next as usize];
                if self.visited[node.0 as usize] {
                    break;
                }
                let edge_id = if dir > 0 {
                    idx.forward[line as usize][k as usize]
                } else {
                    idx.backward[line as usize][next as usize]
                };
                let edge = &idx.net.edges[edge_id.0 as usize];
                t += edge.seconds;
                d += edge.distance_m;
                if t + walk > self.rules.max_journey_seconds {
                    break;
                }
                self.links.push(edge_id);
                self.costs.push(edge.seconds as f64);
                self.visited[node.0 as usize] = true;
                marked.push(node);
                k = next;
                if !self.hopeless(node, t + walk, pattern) {
                    self.alight(node, pattern, t, walk, d);
                }
            }
            self.links.truncate(depth);
            self.costs.truncate(depth);
            for m in marked {
                self.visited[m.0 as usize] = false;
            }
        }
        self.line_used[line as usize] = false;
    }

    fn alight(&mut self, node: NodeId, pattern: Pattern, ivtt: u32, walk: u32, dist: f64) {
        if node == self.dest {
            self.record(pattern, ivtt, walk, dist);
            return;
        }
        if self.transfer_stops.len() as u32 >= self.rules.max_transfers {
            return;
        }
        let idx = self.idx;
        for &(to, w) in &idx.walks[node.0 as usize] {
            if w > self.rules.max_transfer_walk_seconds || (to != node && self.visited[to.0 as usize]) {
                continue;
            }
            let walk2 = walk + w;
            for &(line, pos) in &idx.serving[to.0 as usize] {
                if self.line_used[line as usize] {
                    continue;
                }
                let Some(next) = pattern.extend(idx.net.lines[line as usize].mode) else {
                    continue;
                };
                if self.hopeless(to, ivtt + walk2, next) {
                    continue;
                }
                let fresh = to != node;
                if fresh {
                    self.visited[to.0 as usize] = true;
                }
                self.transfer_stops.push(node);
                self.ride(line, pos, next, ivtt, walk2, dist);
                self.transfer_stops.pop();
                if fresh {
                    self.visited[to.0 as usize] = false;
                }
            }
        }
    }

    fn record(&mut self, pattern: Pattern, ivtt: u32, walk: u32, dist: f64) {
        let cand = Candidate {
            key: RankKey {
                journey: ivtt + walk,
                transfers: self.transfer_stops.len() as u32,
                links: self.links.clone(),
            },
            ivtt,
            walk,
            distance_m: dist,
            link_costs: self.costs.clone(),
            transfer_stops: self.transfer_stops.clone(),
        };
        let c = pattern.category().index();
        if self.done[c] {
            return;
        }
        let heap = &mut self.best[c];
        if heap.len() < self.rules.per_category {
            heap.push(cand);
        } else if heap.peek().is_some_and(|w| cand < *w) {
            heap.pop();
            heap.push(cand);
        }
    }
}

/// Fastest routes per category for one OD pair, grouped by category and
/// sorted within each. Empty when no feasible route exists.
pub fn enumerate_choice_set(net: &SyntheticNetwork, od: (NodeId, NodeId)) -> Vec<Route> {
    RouteIndex::new(net).enumerate(od, &EnumerationRules::default())
}

/// Enumerate many OD pairs in parallel; output order follows `ods`.
pub fn enumerate_many(net: &SyntheticNetwork, ods: &[(NodeId, NodeId)], rules: &EnumerationRules) -> Vec<Vec<Route>> {
    let idx = RouteIndex::new(net);
    ods.par_iter().map(|&od| idx.enumerate(od, rules)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::network::{generate_network, Edge, Line, NetworkConfig, Stop, TransferPair};
    use crate::types::LANDUSE_DIM;

    fn stop(i: u32, mode: TransitMode) -> Stop {
        Stop {
            id: NodeId(i),
            mode,
            landuse: [0.0; LANDUSE_DIM],
        }
    }

    /// Lines given as (mode, stops, seconds per hop); builds both directions.
    fn toy(n: u32, lines: &[(TransitMode, Vec<u32>, u32)], pairs: &[(u32, u32, u32)]) -> SyntheticNetwork {
        let mut nodes: Vec<Stop> = (0..n).map(|i| stop(i, TransitMode::Bus)).collect();
        let mut edges = Vec::new();
        let mut out_lines = Vec::new();
        for (li, (mode, stops, secs)) in lines.iter().enumerate() {
            for s in stops {
                if *mode == TransitMode::Rail {
                    nodes[*s as usize].mode = TransitMode::Rail;
                }
            }
            for w in stops.windows(2) {
                for (a, b) in [(w[0], w[1]), (w[1], w[0])] {
                    edges.push(Edge {
                        id: LinkId(edges.len() as u32),
                        from: NodeId(a),
                        to: NodeId(b),
                        line: li as u32,
                        mode: *mode,
                        seconds: *secs,
                        distance_m: *secs as f64 * 10.0,
                    });
                }
            }
            out_lines.push(Line {
                mode: *mode,
                stops: stops.iter().map(|&s| NodeId(s)).collect(),
            });
        }
        SyntheticNetwork {
            nodes,
            lines: out_lines,
            edges,
            transfer_pairs: pairs
                .iter()
                .map(|&(a, b, w)| TransferPair {
                    a: NodeId(a),
                    b: NodeId(b),
                    walk_seconds: w,
                })
                .collect(),
        }
    }

    #[test]
    fn single_bus_line() {
        let net = toy(4, &[(TransitMode::Bus, vec![0, 1, 2, 3], 60)], &[]);
        let set = enumerate_choice_set(&net, (NodeId(0), NodeId(3)));
        assert_eq!(set.len(), 1);
        assert_eq!(set[0].category, RouteCategory::Bus);
        assert_eq!(set[0].ivtt_seconds, 180);
        assert_eq!(set[0].num_transfers, 0);
        assert_eq!(set[0].fare_cents, 92);
    }

    #[test]
    fn keeps_five_fastest_of_eight() {
        // eight parallel bus lines 0 -> 1 with increasing hop times
        let lines: Vec<_> = (0..8).map(|k| (TransitMode::Bus, vec![0, 1], 100 + 10 * k)).collect();
        let net = toy(2, &lines, &[]);
        let set = enumerate_choice_set(&net, (NodeId(0), NodeId(1)));
        let times: Vec<u32> = set.iter().map(|r| r.journey_seconds()).collect();
        assert_eq!(times, vec![100, 110, 120, 130, 140]);
    }

    #[test]
    fn transfer_walk_limit() {
        // bus 0-1, walk 1->2, rail 2-3
        let ok = toy(
            4,
            &[(TransitMode::Bus, vec![0, 1], 300), (TransitMode::Rail, vec![2, 3], 300)],
            &[(1, 2, 45 * 60)],
        );
        let set = enumerate_choice_set(&ok, (NodeId(0), NodeId(3)));
        assert_eq!(set.len(), 1);
        assert_eq!(set[0].category, RouteCategory::BusRail);
        assert_eq!(set[0].walk_transfer_seconds, 2700);
        let too_long = toy(
            4,
            &[(TransitMode::Bus, vec![0, 1], 300), (TransitMode::Rail, vec![2, 3], 300)],
            &[(1, 2, 46 * 60)],
        );
        assert!(enumerate_choice_set(&too_long, (NodeId(0), NodeId(3))).is_empty());
    }

    #[test]
    fn ties_broken_by_transfers_then_links() {
        // direct bus 0-1-2 (2 x 100 s) vs bus 0-1 + same-stop change to bus 1-2
        let net = toy(
            3,
            &[
                (TransitMode::Bus, vec![0, 1, 2], 100),
                (TransitMode::Bus, vec![1, 2], 100),
                (TransitMode::Bus, vec![0, 1], 100),
            ],
            &[(1, 1, 0)],
        );
        let set = enumerate_choice_set(&net, (NodeId(0), NodeId(2)));
        let bus: Vec<_> = set.iter().filter(|r| r.category == RouteCategory::Bus).collect();
        let busbus: Vec<_> = set.iter().filter(|r| r.category == RouteCategory::BusBus).collect();
        assert_eq!(bus.len(), 1);
        assert_eq!(busbus.len(), 3);
        assert!(busbus.iter().all(|r| r.journey_seconds() == 200 && r.num_transfers == 1));
        for w in busbus.windows(2) {
            assert!(w[0].links < w[1].links);
        }
    }

    #[test]
    fn journey_cap_excludes_slow_routes() {
        let net = toy(2, &[(TransitMode::Bus, vec![0, 1], 7201)], &[]);
        assert!(enumerate_choice_set(&net, (NodeId(0), NodeId(1))).is_empty());
        assert!(enumerate_choice_set(&net, (NodeId(0), NodeId(0))).is_empty());
    }

    /// Exhaustive search without pruning, as an oracle for the pruned search.
    fn brute_force(net: &SyntheticNetwork, od: (NodeId, NodeId), rules: &EnumerationRules) -> Vec<(RouteCategory, RankKey)> {
        let rules_all = EnumerationRules {
            per_category: usize::MAX,
            ..*rules
        };
        let idx = RouteIndex::new(net);
        let mut all: Vec<(RouteCategory, RankKey)> = idx
            .enumerate(od, &rules_all)
            .into_iter()
            .map(|r| {
                (
                    r.category,
                    RankKey {
                        journey: r.journey_seconds(),
                        transfers: r.num_transfers,
                        links: r.links,
                    },
                )
            })
            .collect();
        all.sort();
        let mut out = Vec::new();
        for c in RouteCategory::ALL {
            out.extend(all.iter().filter(|x| x.0 == c).take(rules.per_category).cloned());
        }
        out
    }

    #[test]
    fn pruned_search_matches_exhaustive() {
        let cfg = NetworkConfig {
            rail_lines: 2,
            rail_stops_per_line: 6,
            bus_routes: 4,
            bus_stops_per_route: 7,
            bus_rail_interchanges: 2,
            area_km: 5.0,
            transfer_radius_m: 600.0,
            ..Default::default()
        };
        let net = generate_network(&cfg, 11).unwrap();
        let rules = EnumerationRules {
            max_transfers: 3,
            ..Default::default()
        };
        let idx = RouteIndex::new(&net);
        let n = net.nodes.len() as u32;
        let mut non_empty = 0;
        for (o, d) in (0..n).step_by(3).flat_map(|o| (0..n).step_by(4).map(move |d| (o, d))) {
            let od = (NodeId(o), NodeId(d));
            let got: Vec<_> = idx
                .enumerate(od, &rules)
                .into_iter()
                .map(|r| {
                    (
                        r.category,
                        RankKey {
                            journey: r.journey_seconds(),
                            transfers: r.num_transfers,
                            links: r.links,
                        },
                    )
                })
                .collect();
            let mut sorted = got.clone();
            sorted.sort();
            assert_eq!(sorted, brute_force(&net, od, &rules));
            non_empty += !got.is_empty() as usize;
        }
        assert!(non_empty > 10);
    }

    #[test]
    fn generated_sets_are_valid_and_parallel_order_stable() {
        let net = generate_network(&NetworkConfig::default(), 5).unwrap();
        let n = net.nodes.len() as u32;
        let ods: Vec<_> = (0..40).map(|i| (NodeId(i * 7 % n), NodeId((i * 13 + 5) % n))).collect();
        let many = enumerate_many(&net, &ods, &EnumerationRules::default());
        for (od, set) in ods.iter().zip(&many) {
            assert_eq!(set, &enumerate_choice_set(&net, *od));
            let mut per = [0; 6];
            for r in set {
                r.validate().unwrap();
                assert!(r.num_transfers <= 5 && r.journey_seconds() <= 7200);
                per[r.category.index()] += 1;
            }
            assert!(per.iter().all(|&c| c <= 5));
        }
    }

    #[test]
    fn zero_transfer_density_gives_single_line_routes() {
        let cfg = NetworkConfig {
            transfer_density: 0.0,
            ..Default::default()
        };
        let net = generate_network(&cfg, 9).unwrap();
        let n = net.nodes.len() as u32;
        for o in (0..n).step_by(5) {
            for d in (0..n).step_by(7) {
                for r in enumerate_choice_set(&net, (NodeId(o), NodeId(d))) {
                    assert!(matches!(r.category, RouteCategory::Bus | RouteCategory::Rail));
                    assert_eq!(r.num_transfers, 0);
                }
            }
        }
    }

    #[test]
    fn tariff_is_piecewise_linear() {
        let t = FareTariff::default();
        assert_eq!(t.fare_cents(1000.0), 92);
        assert_eq!(t.fare_cents(3200.0), 92);
        assert_eq!(t.fare_cents(4200.0), 98);
        assert_eq!(t.fare_cents(1e6), 250);
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Landuse, LinkId, NodeId, LANDUSE_DIM};

const COMMERCIAL: usize = 10;
const MASS_RAPID_TRANSIT: usize = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransitMode {
    Bus,
    Rail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub rail_lines: usize,
    pub rail_stops_per_line: usize,
    pub bus_routes: usize,
    /// Stops per bus route, including the rail stations it calls at.
    pub bus_stops_per_route: usize,
    /// Rail stations each bus route passes through (shared nodes).
    pub bus_rail_interchanges: usize,
    /// Side of the square service area.
    pub area_km: f64,
    pub rail_speed_kmh: f64,
    pub bus_speed_kmh: f64,
    pub dwell_seconds: f64,
    pub walk_speed_mps: f64,
    /// Stops closer than this are candidate walking transfers.
    pub transfer_radius_m: f64,
    /// Probability that each candidate transfer is kept (0 disables all
    /// transfers, including same-station interchanges).
    pub transfer_density: f64,
    /// Dirichlet concentration of stop land-use compositions.
    pub landuse_concentration: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            rail_lines: 3,
            rail_stops_per_line: 12,
            bus_routes: 14,
            bus_stops_per_route: 16,
            bus_rail_interchanges: 3,
            area_km: 12.0,
            rail_speed_kmh: 42.0,
            bus_speed_kmh: 20.0,
            dwell_seconds: 25.0,
            walk_speed_mps: 1.2,
            transfer_radius_m: 450.0,
            transfer_density: 0.85,
            landuse_concentration: 0.25,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rail_lines * self.rail_stops_per_line + self.bus_routes * self.bus_stops_per_route == 0 {
            return Err(Error::config("network has no stops"));
        }
        if (self.rail_lines > 0 && self.rail_stops_per_line < 2)
            || (self.bus_routes > 0 && self.bus_stops_per_route < 2)
        {
            return Err(Error::config("every line needs at least two stops"));
        }
        if self.bus_routes > 0
            && self.bus_rail_interchanges > 0
            && (self.rail_lines == 0 || self.bus_rail_interchanges >= self.bus_stops_per_route)
        {
            return Err(Error::config(
                "bus-rail interchanges need rail lines and fewer interchanges than bus stops",
            ));
        }
        if !(0.0..=1.0).contains(&self.transfer_density) {
            return Err(Error::config("transfer_density must be in [0, 1]"));
        }
        let positive = [
            self.area_km,
            self.rail_speed_kmh,
            self.bus_speed_kmh,
            self.walk_speed_mps,
            self.landuse_concentration,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.dwell_seconds < 0.0 {
            return Err(Error::config("speeds, area and concentration must be positive"));
        }
        Ok(())
    }

    /// Node count implied by the config: every rail stop plus the bus stops
    /// that are not rail interchanges.
    pub fn expected_nodes(&self) -> usize {
        let bus_own = if self.rail_lines > 0 {
            self.bus_stops_per_route - self.bus_rail_interchanges.min(self.bus_stops_per_route)
        } else {
            self.bus_stops_per_route
        };
        self.rail_lines * self.rail_stops_per_line + self.bus_routes * bus_own
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stop {
    pub id: NodeId,
    pub mode: TransitMode,
    #[serde(with = "crate::types::landuse_serde")]
    pub landuse: Landuse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub mode: TransitMode,
    pub stops: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub id: LinkId,
    pub from: NodeId,
    pub to: NodeId,
    pub line: u32,
    pub mode: TransitMode,
    pub seconds: u32,
    pub distance_m: f64,
}

/// Walkable transfer between two stops; `a == b` is an interchange within one
/// station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferPair {
    pub a: NodeId,
    pub b: NodeId,
    pub walk_seconds: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticNetwork {
    pub nodes: Vec<Stop>,
    pub lines: Vec<Line>,
    /// Both directions of every consecutive stop pair on every line.
    pub edges: Vec<Edge>,
    pub transfer_pairs: Vec<TransferPair>,
}

impl SyntheticNetwork {
    pub fn node(&self, id: NodeId) -> Option<&Stop> {
        self.nodes.get(id.0 as usize)
    }

    pub fn edge(&self, id: LinkId) -> Option<&Edge> {
        self.edges.get(id.0 as usize)
    }

    /// Mean land-use composition of the given stops; the zero vector when
    /// there are none.
    pub fn mean_landuse(&self, stops: &[NodeId]) -> Landuse {
        let mut out = [0.0; LANDUSE_DIM];
        if stops.is_empty() {
            return out;
        }
        for s in stops {
            for (t, v) in out.iter_mut().zip(self.nodes[s.0 as usize].landuse.iter()) {
                *t += v;
            }
        }
        let k = stops.len() as f64;
        out.iter_mut().for_each(|t| *t /= k);
        out
    }

    pub fn validate(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id.0 as usize != i {
                return Err(Error::data(format!("node {i} carries id {}", n.id.0)));
            }
            let total: f64 = n.landuse.iter().sum();
            if n.landuse.iter().any(|v| !(0.0..=1.0).contains(v)) || total > 1.0 + 1e-9 {
                return Err(Error::data(format!("node {i} has an invalid land-use vector")));
            }
        }
        for (i, e) in self.edges.iter().enumerate() {
            if e.id.0 as usize != i || e.seconds == 0 {
                return Err(Error::data(format!("edge {i} is malformed")));
            }
            if self.node(e.from).is_none() || self.node(e.to).is_none() {
                return Err(Error::data(format!("edge {i} references an unknown node")));
            }
        }
        for l in &self.lines {
            if l.stops.iter().any(|s| self.node(*s).is_none()) {
                return Err(Error::data("line references an unknown node"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Point {
    x: f64,
    y: f64,
}

impl Point {
    fn dist(self, o: Point) -> f64 {
        ((self.x - o.x).powi(2) + (self.y - o.y).powi(2)).sqrt()
    }
}

fn sample_landuse<R: Rng>(rng: &mut R, concentration: f64, rail: bool) -> Landuse {
    let mut v = [0.0; LANDUSE_DIM];
    for (k, slot) in v.iter_mut().enumerate() {
        let mut alpha = concentration;
        if rail && (k == MASS_RAPID_TRANSIT || k == COMMERCIAL) {
            alpha += 2.0;
        }
        *slot = Gamma::new(alpha, 1.0).expect("positive shape").sample(rng);
    }
    let total: f64 = v.iter().sum();
    // share of the buffer that is zoned
    let zoned = rng.random_range(0.6..1.0);
    for x in v.iter_mut() {
        *x = *x / total * zoned;
    }
    v
}

/// Build a synthetic multimodal network. Deterministic in `(config, seed)`.
pub fn generate_network(config: &NetworkConfig, seed: u64) -> Result<SyntheticNetwork> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = config.area_km * 1000.0;
    let mut nodes: Vec<Stop> = Vec::new();
    let mut points: Vec<Point> = Vec::new();
    let mut lines: Vec<Line> = Vec::new();
    let mut rail_stations: Vec<NodeId> = Vec::new();

    let new_node = |mode: TransitMode, p: Point, rng: &mut ChaCha8Rng, nodes: &mut Vec<Stop>, points: &mut Vec<Point>| {
        let id = NodeId(nodes.len() as u32);
        let landuse = sample_landuse(rng, config.landuse_concentration, mode == TransitMode::Rail);
        nodes.push(Stop { id, mode, landuse });
        points.push(p);
        id
    };

    // Rail lines: straight corridors between opposite edges of the area.
    for _ in 0..config.rail_lines {
        let horizontal = rng.random_bool(0.5);
        let (a, b) = (rng.random_range(0.1..0.9) * side, rng.random_range(0.1..0.9) * side);
        let (start, end) = if horizontal {
            (Point { x: 0.05 * side, y: a }, Point { x: 0.95 * side, y: b })
        } else {
            (Point { x: a, y: 0.05 * side }, Point { x: b, y: 0.95 * side })
        };
        let n = config.rail_stops_per_line;
        let mut stops = Vec::with_capacity(n);
        for k in 0..n {
            let t = k as f64 / (n - 1) as f64;
            let jitter = side * 0.01;
            let p = Point {
                x: start.x + t * (end.x - start.x) + rng.random_range(-jitter..jitter),
                y: start.y + t * (end.y - start.y) + rng.random_range(-jitter..jitter),
            };
            let id = new_node(TransitMode::Rail, p, &mut rng, &mut nodes, &mut points);
            rail_stations.push(id);
            stops.push(id);
        }
        lines.push(Line { mode: TransitMode::Rail, stops });
    }

    // Bus routes: meander through a few rail stations, with own stops between.
    for _ in 0..config.bus_routes {
        let k = if rail_stations.is_empty() { 0 } else { config.bus_rail_interchanges };
        let mut anchors: Vec<NodeId> = Vec::new();
        while anchors.len() < k.min(rail_stations.len()) {
            let s = rail_stations[rng.random_range(0..rail_stations.len())];
            if !anchors.contains(&s) {
                anchors.push(s);
            }
        }
        // order anchors along a sweep so the route does not zig-zag
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (ux, uy) = (angle.cos(), angle.sin());
        anchors.sort_by(|a, b| {
            let pa = points[a.0 as usize];
            let pb = points[b.0 as usize];
            (pa.x * ux + pa.y * uy).total_cmp(&(pb.x * ux + pb.y * uy))
        });
        let n_total = config.bus_stops_per_route;
        let n_own = n_total - anchors.len();
        // waypoints: an own start point, the anchors, an own end point
        let random_point = |rng: &mut ChaCha8Rng| Point {
            x: rng.random_range(0.05..0.95) * side,
            y: rng.random_range(0.05..0.95) * side,
        };
        let first = random_point(&mut rng);
        let last = random_point(&mut rng);
        let mut waypoints: Vec<(Point, Option<NodeId>)> = vec![(first, None)];
        waypoints.extend(anchors.iter().map(|&a| (points[a.0 as usize], Some(a))));
        waypoints.push((last, None));
        // distribute own stops over the segments in proportion to length
        let seg_len: Vec<f64> = waypoints.windows(2).map(|w| w[0].0.dist(w[1].0).max(1.0)).collect();
        let total_len: f64 = seg_len.iter().sum();
        // own stops: 2 endpoints + interior
        let interior = n_own.saturating_sub(2);
        let mut per_seg: Vec<usize> = seg_len
            .iter()
            .map(|l| ((l / total_len) * interior as f64).floor() as usize)
            .collect();
        let mut assigned: usize = per_seg.iter().sum();
        let mut s = 0;
        while assigned < interior {
            let k = s % per_seg.len();
            per_seg[k] += 1;
            assigned += 1;
            s += 1;
        }
        let mut stops: Vec<NodeId> = Vec::with_capacity(n_total);
        let endpoint_budget = n_own.min(2);
        if endpoint_budget >= 1 {
            stops.push(new_node(TransitMode::Bus, first, &mut rng, &mut nodes, &mut points));
        }
        for (seg, w) in waypoints.windows(2).enumerate() {
            let (a, b) = (w[0].0, w[1].0);
            let m = per_seg[seg];
            for j in 1..=m {
                let t = j as f64 / (m + 1) as f64;
                let p = Point {
                    x: a.x + t * (b.x - a.x) + rng.random_range(-150.0..150.0),
                    y: a.y + t * (b.y - a.y) + rng.random_range(-150.0..150.0),
                };
                stops.push(new_node(TransitMode::Bus, p, &mut rng, &mut nodes, &mut points));
            }
            if let Some(anchor) = w[1].1 {
                stops.push(anchor);
            }
        }
        if endpoint_budget == 2 {
            stops.push(new_node(TransitMode::Bus, last, &mut rng, &mut nodes, &mut points));
        }
        lines.push(Line { mode: TransitMode::Bus, stops });
    }

    // Edges, both directions along every line.
    let mut edges = Vec::new();
    for (li, line) in lines.iter().enumerate() {
        let speed = match line.mode {
            TransitMode::Rail => config.rail_speed_kmh,
            TransitMode::Bus => config.bus_speed_kmh,
        } / 3.6;
        for w in line.stops.windows(2) {
            let d = points[w[0].0 as usize].dist(points[w[1].0 as usize]).max(50.0);
            let seconds = (d / speed + config.dwell_seconds).round().max(1.0) as u32;
            for (from, to) in [(w[0], w[1]), (w[1], w[0])] {
                edges.push(Edge {
                    id: LinkId(edges.len() as u32),
                    from,
                    to,
                    line: li as u32,
                    mode: line.mode,
                    seconds,
                    distance_m: d,
                });
            }
        }
    }

    // Transfers: walkable stop pairs plus interchanges inside shared stations.
    let mut transfer_pairs = Vec::new();
    let mut serves: Vec<Vec<u32>> = vec![Vec::new(); nodes.len()];
    for (li, line) in lines.iter().enumerate() {
        for s in &line.stops {
            if !serves[s.0 as usize].contains(&(li as u32)) {
                serves[s.0 as usize].push(li as u32);
            }
        }
    }
    for i in 0..nodes.len() {
        if serves[i].len() > 1 && rng.random_bool(config.transfer_density) {
            let walk = rng.random_range(30.0..240.0f64).round() as u32;
            transfer_pairs.push(TransferPair {
                a: NodeId(i as u32),
                b: NodeId(i as u32),
                walk_seconds: walk,
            });
        }
        for j in i + 1..nodes.len() {
            let d = points[i].dist(points[j]);
            if d <= config.transfer_radius_m && rng.random_bool(config.transfer_density) {
                let walk = (d / config.walk_speed_mps + 20.0).round() as u32;
                transfer_pairs.push(TransferPair {
                    a: NodeId(i as u32),
                    b: NodeId(j as u32),
                    walk_seconds: walk,
                });
            }
        }
    }

    let net = SyntheticNetwork {
        nodes,
        lines,
        edges,
        transfer_pairs,
    };
    net.validate()?;
    Ok(net)
}

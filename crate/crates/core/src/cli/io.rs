//! On-disk formats: the network as one JSON document and observations as
//! JSON lines with raw route attributes. Land-use vectors are not repeated
//! per route; they are restored from the network's stops.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::SyntheticNetwork;
use crate::error::{Error, Result};
use crate::types::{CardType, ChoiceObservation, LinkId, NodeId, Route, RouteCategory};

pub const NETWORK_FILE: &str = "network.json";
pub const OBSERVATIONS_FILE: &str = "observations.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RouteRecord {
    ivtt_seconds: u32,
    fare_cents: u32,
    walk_transfer_seconds: u32,
    num_transfers: u32,
    category: RouteCategory,
    links: Vec<LinkId>,
    link_costs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    transfer_stops: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservationRecord {
    origin: NodeId,
    destination: NodeId,
    card_type: CardType,
    chosen: usize,
    alternatives: Vec<RouteRecord>,
}

impl ObservationRecord {
    fn from_observation(o: &ChoiceObservation) -> Self {
        ObservationRecord {
            origin: o.od_pair.0,
            destination: o.od_pair.1,
            card_type: o.card_type,
            chosen: o.chosen,
            alternatives: o
                .alternatives
                .iter()
                .map(|r| RouteRecord {
                    ivtt_seconds: r.ivtt_seconds,
                    fare_cents: r.fare_cents,
                    walk_transfer_seconds: r.walk_transfer_seconds,
                    num_transfers: r.num_transfers,
                    category: r.category,
                    links: r.links.clone(),
                    link_costs: r.link_costs.clone(),
                    transfer_stops: r.transfer_stops.clone(),
                })
                .collect(),
        }
    }

    fn into_observation(self, net: &SyntheticNetwork) -> Result<ChoiceObservation> {
        let landuse = |n: NodeId| {
            net.node(n)
                .map(|s| s.landuse)
                .ok_or_else(|| Error::data(format!("unknown stop {}", n.0)))
        };
        let origin = landuse(self.origin)?;
        let dest = landuse(self.destination)?;
        let mut alternatives = Vec::with_capacity(self.alternatives.len());
        for r in self.alternatives {
            if let Some(s) = r.transfer_stops.iter().find(|s| net.node(**s).is_none()) {
                return Err(Error::data(format!("unknown transfer stop {}", s.0)));
            }
            if let Some(l) = r.links.iter().find(|l| net.edge(**l).is_none()) {
                return Err(Error::data(format!("unknown link {}", l.0)));
            }
            alternatives.push(Route {
                ivtt_seconds: r.ivtt_seconds,
                fare_cents: r.fare_cents,
                walk_transfer_seconds: r.walk_transfer_seconds,
                num_transfers: r.num_transfers,
                links: r.links,
                link_costs: r.link_costs,
                category: r.category,
                origin_landuse: origin,
                dest_landuse: dest,
                transfer_landuse: net.mean_landuse(&r.transfer_stops),
                transfer_stops: r.transfer_stops,
            });
        }
        let o = ChoiceObservation {
            od_pair: (self.origin, self.destination),
            alternatives,
            chosen: self.chosen,
            card_type: self.card_type,
        };
        o.validate().map_err(|e| Error::data(e.to_string()))?;
        Ok(o)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_network(path: &Path, net: &SyntheticNetwork) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, net)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_network(path: &Path) -> Result<SyntheticNetwork> {
    let file = File::open(path).map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    let net: SyntheticNetwork = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    net.validate()?;
    Ok(net)
}

pub fn write_observations(path: &Path, observations: &[ChoiceObservation]) -> Result<()> {
    let mut w = create(path)?;
    for o in observations {
        serde_json::to_writer(&mut w, &ObservationRecord::from_observation(o))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_observations(path: &Path, net: &SyntheticNetwork) -> Result<Vec<ChoiceObservation>> {
    let file = File::open(path).map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ObservationRecord = serde_json::from_str(&line)
            .map_err(|e| Error::data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        let o = rec
            .into_observation(net)
            .map_err(|e| Error::data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(o);
    }
    if out.is_empty() {
        return Err(Error::data(format!("{} holds no observations", path.display())));
    }
    Ok(out)
}

/// Network and observations from a dataset directory.
pub fn read_dataset(dir: &Path) -> Result<(SyntheticNetwork, Vec<ChoiceObservation>)> {
    let net = read_network(&dir.join(NETWORK_FILE))?;
    let obs = read_observations(&dir.join(OBSERVATIONS_FILE), &net)?;
    Ok((net, obs))
}

pub fn write_dataset(dir: &Path, net: &SyntheticNetwork, observations: &[ChoiceObservation]) -> Result<()> {
    write_network(&dir.join(NETWORK_FILE), net)?;
    write_observations(&dir.join(OBSERVATIONS_FILE), observations)
}

/// Write a text file, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, DatasetConfig, GroundTruthUtility, NetworkConfig};

    #[test]
    fn dataset_round_trips_field_by_field() {
        let cfg = DatasetConfig {
            n_od: 6,
            n_observations: 300,
            ..DatasetConfig::default()
        };
        let (net, obs) =
            generate_dataset(&NetworkConfig::default(), &cfg, &GroundTruthUtility::with_landuse_effects(), 4)
                .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &net, &obs).unwrap();
        let (net2, obs2) = read_dataset(dir.path()).unwrap();
        assert_eq!(net2, net);
        assert_eq!(obs2.len(), 300);
        assert_eq!(obs2, obs);
        assert!(obs2.iter().all(|o| o.validate().is_ok()));
    }

    #[test]
    fn corrupt_lines_are_data_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (net, obs) = generate_dataset(
            &NetworkConfig::default(),
            &DatasetConfig {
                n_od: 2,
                n_observations: 3,
                ..DatasetConfig::default()
            },
            &GroundTruthUtility::default(),
            1,
        )
        .unwrap();
        write_dataset(dir.path(), &net, &obs).unwrap();
        let p = dir.path().join(OBSERVATIONS_FILE);
        let mut text = std::fs::read_to_string(&p).unwrap();
        text.push_str("{\"origin\": 0}\n");
        std::fs::write(&p, text).unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("line 4"), "{err}");
        assert_eq!(read_dataset(&dir.path().join("missing")).unwrap_err().exit_code(), 3);
    }
}

//! Synthetic transit network, choice-set enumeration and choice simulation.

pub mod enumerate;
pub mod network;
pub mod simulate;

pub use enumerate::{enumerate_choice_set, enumerate_many, EnumerationRules, FareTariff, RouteIndex};
pub use network::{generate_network, Edge, Line, NetworkConfig, Stop, SyntheticNetwork, TransferPair, TransitMode};
pub use simulate::{
    generate_dataset, sample_od_pairs, simulate_choices, DatasetConfig, simulate_from_sets, GroundTruthUtility, HiddenUnit, LanduseUtility,
    SimulationConfig,
};

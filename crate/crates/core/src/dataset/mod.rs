//! Attack × shed sweeps and their conversion into a classifier dataset.

mod report;
mod sample;
mod split;
mod sweep;
mod viability;

pub use report::{distribution_report, CountRow, DistributionReport};
pub use sample::{dataset_channels, make_sample, samples_from_sweep, SampleMeta, ShedSample};
pub use split::{
    channel_stats, read_dataset, split_and_normalize, write_dataset, Dataset, DatasetManifest,
    SampleEntry, SplitInfo, MANIFEST_FILE, MIN_SAMPLES, STD_FLOOR, TEST_FRACTION, VAL_FRACTION,
};
pub use sweep::{
    attack_catalog, load_records, run_scenario, run_sweep, scenario_id, trajectory_path,
    ScenarioRecord, SweepConfig, SweepSummary, RECORDS_FILE, TRAJECTORY_DIR,
};
pub use viability::{viability_filter, RejectReason, Viability};

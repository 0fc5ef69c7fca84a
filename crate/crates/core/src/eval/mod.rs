//! Offline evaluation: speed fields, virtual trajectories, warning rates,
//! attribution shares, response delays and the experiment matrix.

mod attribution;
mod events;
mod experiments;
mod field;
mod render;
mod trajectory;
mod warnings;

pub use attribution::{attribution_report, shares, AttributionRow, ReportOptions, Shares};
pub use events::{
    detect_events, response_delay, CongestionEvent, DelayStats, DetectedBy, EventConfig, Region, ResponseDelay,
};
pub use experiments::{
    record_episode, run_controller, run_experiment_matrix, run_response_suite, ExperimentResult, InputSource,
    MatrixConfig, RecordedEpisode, RecordedTick, ResponseSuiteConfig, ResponseSuiteResult, EXPERIMENT_NAMES,
};
pub use field::{coarse_field, ground_truth_field, SpeedField, FIELD_DT_S, FIELD_DX_MI};
pub use render::{field_image, save_png, speed_colour, write_field_csv, LimitGrid};
pub use trajectory::{virtual_trajectory, VirtualTrajectory, FLOOR_SPEED_MPH, TRAJECTORY_STEP_S};
pub use warnings::{
    audit_schedule, passages, seed_trajectories, tally, warning_audit, DecisionSchedule, DisplaySchedule,
    PassageRecord, PerfectForesight, WarningConfig, WarningCounting, WarningCounts, WarningLedger,
};

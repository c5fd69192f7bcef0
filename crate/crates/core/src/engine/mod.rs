mod config;
mod persist;
mod report;
mod sampling;
mod state;

pub use config::{AuditConfig, AuditMethod, ContestConfig, TestChoice, TestName};
pub use persist::{load_state, save_state};
pub use report::{measure_all, AssertionReport, AuditReport, ContestReport};
pub use sampling::{draw_indices, hash_counter};
pub use state::{
    AssertionAudit, AssertionFrame, AssertionLog, AuditDecision, AuditEvent, AuditState, ContestAudit, ContestStatus,
    Draw, DrawLog, Frame, Interpretation, Round,
};

//! JSON-over-HTTP job service for phasefd.
//!
//! Clients upload instances, start solver jobs, poll their progress with a
//! cursor, fetch solutions and start refinement jobs seeded from a parent
//! solution with edited pins.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/api/instances` | instance document -> `{instance_id}` |
//! | GET | `/api/instances/{id}` | instance document |
//! | POST | `/api/jobs` | `{instance_id, config, freeze?, freeze_ops?}` -> job |
//! | GET | `/api/jobs/{id}` | job status |
//! | GET | `/api/jobs/{id}/events?cursor=N` | progress records from `N` |
//! | GET | `/api/jobs/{id}/solution` | solution document, 409 until done |
//! | POST | `/api/jobs/{id}/cancel` | request cancellation |
//! | POST | `/api/jobs/{id}/refine` | `{freeze, config}` edits -> child job |

pub mod api;
pub mod error;
pub mod freeze_ops;
pub mod job;
pub mod store;

pub use api::{router, AppState, EventsPage};
pub use error::ApiError;
pub use freeze_ops::{ActivationRef, FreezeOps, PinActivation, PinColumn};
pub use job::{EventRecord, Job, JobStatus, JobView};
pub use store::{Catalog, StoreError};

/// Serves the API on `listener` until the future is dropped.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

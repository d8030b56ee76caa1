//! Scripted HTTP session against a live service.

use std::time::{Duration, Instant};

use phasefd::evaluation::{self, SyntheticSpec};
use phasefd::io::{InstanceDocument, SolutionDocument};
use phasefd::{GibbsMode, ResamplePlan, SolverConfig};
use phasefd_service::{AppState, Catalog, EventRecord, EventsPage, JobStatus, JobView};
use serde_json::{json, Value};

use crate::Outcome;

const NAME: &str = "service";

type Step<T> = Result<T, String>;

struct Session {
    client: reqwest::Client,
    base: String,
}

impl Session {
    async fn send(&self, req: reqwest::RequestBuilder, expect: u16) -> Step<Value> {
        let resp = req.send().await.map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let text = resp.text().await.map_err(|e| e.to_string())?;
        if status != expect {
            return Err(format!("expected HTTP {expect}, got {status}: {text}"));
        }
        serde_json::from_str(&text).map_err(|e| e.to_string())
    }

    async fn get(&self, path: &str, expect: u16) -> Step<Value> {
        self.send(self.client.get(format!("{}{path}", self.base)), expect).await
    }

    async fn post(&self, path: &str, body: &Value, expect: u16) -> Step<Value> {
        self.send(self.client.post(format!("{}{path}", self.base)).json(body), expect).await
    }

    async fn job(&self, id: &str) -> Step<JobView> {
        serde_json::from_value(self.get(&format!("/api/jobs/{id}"), 200).await?).map_err(|e| e.to_string())
    }

    /// Polls events with a cursor until the job is terminal and every record
    /// has been read.
    async fn follow(&self, id: &str) -> Step<(Vec<EventRecord>, JobStatus)> {
        let deadline = Instant::now() + Duration::from_secs(120);
        let mut cursor = 0u64;
        let mut records: Vec<EventRecord> = Vec::new();
        loop {
            let page: EventsPage = serde_json::from_value(
                self.get(&format!("/api/jobs/{id}/events?cursor={cursor}&limit=250"), 200).await?,
            )
            .map_err(|e| e.to_string())?;
            if let Some(first) = page.records.first() {
                if first.seq != cursor {
                    return Err(format!("cursor {cursor} returned seq {}", first.seq));
                }
            }
            let drained = page.records.is_empty();
            records.extend(page.records);
            cursor = page.next_cursor;
            if drained && page.status.is_terminal() {
                return Ok((records, page.status));
            }
            if Instant::now() > deadline {
                return Err(format!("job {id} did not finish"));
            }
            if drained {
                tokio::time::sleep(Duration::from_millis(10)).await;
            }
        }
    }
}

/// Checks record order, status moves and per-phase loss monotonicity.
fn check_events(records: &[EventRecord]) -> Step<usize> {
    let mut phases = 1;
    for (i, pair) in records.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        if b.seq != a.seq + 1 {
            return Err(format!("records out of order at {i}"));
        }
        if !(a.status == b.status || a.status.can_move_to(b.status)) {
            return Err(format!("illegal status move {:?} -> {:?}", a.status, b.status));
        }
        if b.status == JobStatus::Rounding {
            phases += 1;
            continue;
        }
        if b.loss > a.loss + 1e-10 * a.loss.max(1.0) {
            return Err(format!("loss rose at record {}: {} -> {}", b.seq, a.loss, b.loss));
        }
    }
    Ok(phases)
}

async fn script() -> Step<String> {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| e.to_string())?;
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    tokio::spawn(phasefd_service::serve(listener, AppState::new(Catalog::in_memory(), 2)));
    let s = Session {
        client: reqwest::Client::new(),
        base: format!("http://{addr}"),
    };

    let spec = SyntheticSpec {
        grid_per_edge: 10,
        n_q: 200,
        alloy_max: 1.02,
        seed: 1,
        ..SyntheticSpec::default()
    };
    let (instance, _) = evaluation::generate(&spec).map_err(|e| e.to_string())?;
    let created = s.post("/api/instances", &json!(InstanceDocument::from(&instance)), 201).await?;
    let instance_id = created["instance_id"].as_str().ok_or("no instance id")?.to_string();
    s.get(&format!("/api/instances/{instance_id}"), 200).await?;
    s.get("/api/instances/unknown", 404).await?;

    // submit and follow a phase-rule job
    let config = SolverConfig::new(3).with_m(6).with_seed(1).with_gibbs(GibbsMode::Exact, 3);
    let job = s.post("/api/jobs", &json!({"instance_id": instance_id, "config": config}), 202).await?;
    let job_id = job["job_id"].as_str().ok_or("no job id")?.to_string();
    let (records, status) = s.follow(&job_id).await?;
    if status != JobStatus::Done {
        return Err(format!("job ended {status:?}"));
    }
    let phases = check_events(&records)?;
    let solution: SolutionDocument =
        serde_json::from_value(s.get(&format!("/api/jobs/{job_id}/solution"), 200).await?).map_err(|e| e.to_string())?;
    let solution = solution.into_solution().map_err(|e| e.to_string())?;
    let gibbs = evaluation::gibbs_percentage(&solution, 3, 0.01);
    if gibbs != 1.0 {
        return Err(format!("gibbs percentage {gibbs}"));
    }

    // cancel a long job
    let long = SolverConfig::new(3).with_m(10).with_conv_gap(1e-300).with_max_iters(1_000_000);
    let job = s.post("/api/jobs", &json!({"instance_id": instance_id, "config": long}), 202).await?;
    let long_id = job["job_id"].as_str().ok_or("no job id")?.to_string();
    let deadline = Instant::now() + Duration::from_secs(30);
    while s.job(&long_id).await?.events < 3 {
        if Instant::now() > deadline {
            return Err("long job never started".into());
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    s.get(&format!("/api/jobs/{long_id}/solution"), 409).await?;
    s.post(&format!("/api/jobs/{long_id}/cancel"), &json!({}), 200).await?;
    let (cancel_records, status) = s.follow(&long_id).await?;
    if status != JobStatus::Cancelled {
        return Err(format!("cancelled job ended {status:?}"));
    }
    check_events(&cancel_records)?;
    let view = s.job(&long_id).await?;
    if view.loss_trace_tail.is_empty() {
        return Err("cancelled job lost its loss trace".into());
    }

    // refine the first job with a sample pinned as basis 1
    let sample_id = instance.samples()[0].id.clone();
    let body = json!({"freeze": {"pin_w": [{"basis": 1, "sample_id": sample_id}]}, "config": {"gibbs": "off"}});
    let child = s.post(&format!("/api/jobs/{job_id}/refine"), &body, 202).await?;
    let child_id = child["job_id"].as_str().ok_or("no job id")?.to_string();
    let (child_records, status) = s.follow(&child_id).await?;
    if status != JobStatus::Done {
        return Err(format!("refine job ended {status:?}"));
    }
    check_events(&child_records)?;
    let child_solution: SolutionDocument =
        serde_json::from_value(s.get(&format!("/api/jobs/{child_id}/solution"), 200).await?).map_err(|e| e.to_string())?;
    let child_solution = child_solution.into_solution().map_err(|e| e.to_string())?;
    let plan = ResamplePlan::new(instance.q(), 1.0).map_err(|e| e.to_string())?;
    let pinned = plan.to_log(&instance.samples()[0].intensity).map_err(|e| e.to_string())?;
    if pinned
        .iter()
        .enumerate()
        .any(|(row, v)| child_solution.w[[row, 1]].to_bits() != v.to_bits())
    {
        return Err("refined basis 1 differs from the pinned sample".into());
    }
    s.post(&format!("/api/jobs/{job_id}/refine"), &json!({"config": {"k": 5}}), 422).await?;

    Ok(format!(
        "{} events over {phases} run phases, cancel after {} iterations, refine child {} iterations with pinned column bit-exact",
        records.len(),
        view.iterations,
        child_solution.iterations
    ))
}

pub fn lifecycle() -> Outcome {
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => return Outcome::error(NAME, e),
    };
    match runtime.block_on(script()) {
        Ok(detail) => Outcome::new(NAME, true, detail),
        Err(e) => Outcome::new(NAME, false, e),
    }
}

#![allow(dead_code)]

use crowd_core::checkpoint::TaskState;
use crowd_core::decision::{Criterion, DecisionMatrix, Ranking};
use crowd_core::fleet::{DeviceProfile, TelemetrySnapshot};
use crowd_core::transport::{Body, Message, RejectReason};
use crowd_core::workloads::{SliceParams, WorkloadSpec};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e12f64..1e12,
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
        Just(f64::MAX),
        Just(1e-300),
    ]
}

fn text() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-zA-Z0-9 +_-]{0,12}",
        any::<String>(),
    ]
}

pub fn task_state() -> impl Strategy<Value = TaskState> {
    (
        prop::collection::btree_map(text(), prop::collection::vec(any::<u8>(), 0..24), 0..5),
        any::<u64>(),
    )
        .prop_map(|(vars, cursor)| TaskState { vars, cursor })
}

pub fn snapshot() -> impl Strategy<Value = TelemetrySnapshot> {
    (text(), finite(), finite(), finite(), finite(), finite(), finite()).prop_map(
        |(worker_id, cpu_util, free_mem_gb, battery, latency_ms, thermal, timestamp_s)| TelemetrySnapshot {
            worker_id,
            cpu_util,
            free_mem_gb,
            battery,
            latency_ms,
            thermal,
            timestamp_s,
        },
    )
}

fn profile() -> impl Strategy<Value = DeviceProfile> {
    (text(), any::<u32>(), finite(), finite(), finite(), finite(), (finite(), finite())).prop_map(
        |(id, cores, freq_ghz, ram_gb, background_load, churn_rate_per_min, reconnect_delay_s)| DeviceProfile {
            id,
            cores,
            freq_ghz,
            ram_gb,
            background_load,
            churn_rate_per_min,
            reconnect_delay_s,
        },
    )
}

fn workload() -> impl Strategy<Value = WorkloadSpec> {
    prop_oneof![
        (any::<u64>(), finite()).prop_map(|(trials, trial_cost)| WorkloadSpec::MonteCarlo { trials, trial_cost }),
        (any::<u64>(), finite()).prop_map(|(items, item_cost)| WorkloadSpec::TileMap { items, item_cost }),
    ]
}

fn params() -> impl Strategy<Value = SliceParams> {
    (text(), any::<u32>(), any::<u64>(), any::<u64>(), any::<u64>()).prop_map(
        |(job_id, slice_index, offset, len, seed)| SliceParams { job_id, slice_index, offset, len, seed },
    )
}

fn reason() -> impl Strategy<Value = RejectReason> {
    prop_oneof![
        Just(RejectReason::Stale),
        Just(RejectReason::NotRegistered),
        Just(RejectReason::Invalid),
    ]
}

pub fn body() -> impl Strategy<Value = Body> {
    prop_oneof![
        (profile(), prop::option::of(snapshot())).prop_map(|(profile, telemetry)| Body::Register { profile, telemetry }),
        prop::option::of(snapshot()).prop_map(|telemetry| Body::Heartbeat { telemetry }),
        snapshot().prop_map(|snapshot| Body::Telemetry { snapshot }),
        (
            any::<u64>(),
            any::<u32>(),
            workload(),
            params(),
            any::<u64>(),
            prop::option::of(task_state()),
            prop::option::of(finite()),
        )
            .prop_map(|(task_id, attempt, workload, params, start_cursor, state, checkpoint_interval_s)| {
                Body::AssignTask { task_id, attempt, workload, params, start_cursor, state, checkpoint_interval_s }
            }),
        (any::<u64>(), any::<u32>(), task_state())
            .prop_map(|(task_id, attempt, state)| Body::CheckpointUpload { task_id, attempt, state }),
        (any::<u64>(), any::<u32>(), prop::collection::vec(any::<u8>(), 0..64), finite())
            .prop_map(|(task_id, attempt, result, busy_s)| Body::CommitResult { task_id, attempt, result, busy_s }),
        (any::<u64>(), prop::option::of(any::<u64>())).prop_map(|(ack_seq, task_id)| Body::Ack { ack_seq, task_id }),
        (any::<u64>(), prop::option::of(any::<u64>()), reason())
            .prop_map(|(ack_seq, task_id, reason)| Body::Reject { ack_seq, task_id, reason }),
        text().prop_map(|reason| Body::DisconnectNotice { reason }),
    ]
}

pub fn message() -> impl Strategy<Value = Message> {
    (text(), any::<u64>(), body()).prop_map(|(sender, seq, body)| Message { sender, seq, body })
}

pub fn ids(m: usize) -> Vec<String> {
    (0..m).map(|i| format!("a{i}")).collect()
}

pub fn criteria(benefit: &[bool]) -> Vec<Criterion> {
    benefit
        .iter()
        .enumerate()
        .map(|(j, b)| if *b { Criterion::benefit(format!("c{j}")) } else { Criterion::cost(format!("c{j}")) })
        .collect()
}

/// (rows, per-criterion benefit flag), m in 2..=6, n in 1..=6.
pub fn matrix_parts() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<bool>)> {
    (2usize..=6, 1usize..=6).prop_flat_map(|(m, n)| {
        (
            prop::collection::vec(prop::collection::vec(0.1f64..100.0, n), m),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

pub fn build(rows: &[Vec<f64>], benefit: &[bool]) -> DecisionMatrix {
    DecisionMatrix::new(ids(rows.len()), criteria(benefit), rows.to_vec()).unwrap()
}

pub fn position(r: &Ranking, id: &str) -> usize {
    r.order.iter().position(|x| x == id).unwrap()
}

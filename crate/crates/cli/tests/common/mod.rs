#![allow(dead_code)]

use etnet::model::ModelConfig;
use etnet::TimeSeries;
use etnet_cli::{run_synth, RunConfig, Task};

pub fn waves_spec(per: usize, jitter: f64, awgn: f64, seed: u64) -> String {
    let group = |kind: &str| {
        format!(
            r#"{{"name":"{kind}","count":{per},"label":"{kind}","phase_jitter":{jitter},"awgn":{awgn},"source":{{"wave":{{"kind":"{kind}","period":30}}}}}}"#
        )
    };
    format!(
        r#"{{"seed":{seed},"length":120,"groups":[{},{},{}]}}"#,
        group("sine"),
        group("square"),
        group("triangle")
    )
}

/// Jittered sine normals plus a share of anomalies of every type.
pub fn detect_corpus(normals: usize, anomalous_fraction: f64, seed: u64) -> Vec<TimeSeries> {
    let spec = format!(
        r#"{{"seed":{seed},"length":60,"groups":[
            {{"name":"n","count":{normals},"phase_jitter":0.3,"awgn":0.05,"source":{{"wave":{{"kind":"sine","period":15}}}},
              "anomaly":{{"types":[1,2,3,4],"fraction":{anomalous_fraction}}}}}]}}"#
    );
    run_synth(&spec, None).unwrap()
}

pub fn tiny_run(task: Task) -> RunConfig {
    RunConfig {
        model: ModelConfig {
            n_e: 2,
            n_n: 4,
            k: 2,
            epochs: 5,
            early_stop_patience: 0,
            batch_size: 8,
            ..ModelConfig::default()
        },
        window: 60,
        train_fraction: 0.5,
        task,
        ..RunConfig::default()
    }
}

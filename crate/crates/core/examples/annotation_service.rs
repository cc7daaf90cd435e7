//! Start the annotation API with a few pending queries and answer them over HTTP.
//!
//! Pass `--hold` to keep the server up for manual poking with curl:
//!
//! ```text
//! cargo run --example annotation_service -- --hold
//! curl localhost:8765/api/queries
//! curl -XPOST localhost:8765/api/labels -H 'content-type: application/json' \
//!      -d '{"series":"synth-2","t":40,"label":1}'
//! ```

use std::sync::Arc;
use std::time::Duration;

use anomaly_rl::active::{LabelStore, Query, QueryBatch};
use anomaly_rl::data::SynthSpec;
use anomaly_rl::service::{self, AnnotationHub, SeriesView};
use serde_json::{json, Value};

fn main() -> anomaly_rl::Result<()> {
    let hold = std::env::args().any(|a| a == "--hold");
    let series = SynthSpec { t: 200, n_anomalies: 3, seed: 2, ..SynthSpec::default() }.generate()?.series;
    let store = Arc::new(LabelStore::new());
    let hub = Arc::new(AnnotationHub::new(store.clone(), vec![SeriesView { id: series.id.clone(), values: series.values.clone() }]));

    let queries = [40, 90, 150]
        .iter()
        .enumerate()
        .map(|(i, &t)| Query {
            series: series.id.clone(),
            t,
            margin: 0.01 * i as f64,
            window: series.window(t, 25).unwrap().outer_iter().map(|r| r.to_vec()).collect(),
        })
        .collect();
    hub.publish(&QueryBatch { queries, budget: 3 });

    let addr = if hold { "127.0.0.1:8765" } else { "127.0.0.1:0" };
    let svc = service::spawn(hub.clone(), addr, None)?;
    let base = format!("http://{}", svc.addr);
    println!("serving on {base}");
    if hold {
        loop {
            std::thread::sleep(Duration::from_secs(5));
            println!("{} pending, {} labels stored", hub.pending().len(), store.len());
        }
    }

    let http = reqwest::blocking::Client::new();
    let pending: Vec<Value> = http.get(format!("{base}/api/queries")).send().and_then(|r| r.json()).expect("queries");
    println!("pending: {:?}", pending.iter().map(|q| (q["t"].clone(), q["margin"].clone())).collect::<Vec<_>>());
    for (q, label) in pending.iter().zip([json!(1), json!(0), json!("skip")]) {
        let body = json!({"series": q["series"], "t": q["t"], "label": label});
        let status = http.post(format!("{base}/api/labels")).json(&body).send().expect("post").status();
        println!("POST t={} label={label} -> {status}", q["t"]);
    }
    let again = http.post(format!("{base}/api/labels")).json(&json!({"series": series.id, "t": 40, "label": 0})).send().expect("post");
    println!("relabel t=40 -> {}", again.status());
    let status: Value = http.get(format!("{base}/api/status")).send().and_then(|r| r.json()).expect("status");
    println!("status: {status}");
    for rec in store.records() {
        println!("stored: t={} label={} {:?}", rec.t, rec.label, rec.provenance);
    }
    svc.stop();
    Ok(())
}

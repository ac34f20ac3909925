use std::time::Duration;

use pmcausal_client::api::{CreateRun, RunState};
use pmcausal_client::{Client, ClientError};
use pmcausal_core::simulation::Scenario;
use pmcausal_service::{serve, ServiceConfig};
use tokio::net::TcpListener;

#[tokio::test]
async fn client_round_trip_over_tcp() {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(async move {
        serve(listener, &ServiceConfig::default(), async {
            let _ = rx.await;
        })
        .await
    });
    let client = Client::new(format!("http://{addr}/"));
    assert_eq!(client.health().await.unwrap().status, "ok");
    assert!(client.presets().await.unwrap().contains_key("main"));

    let mut s = Scenario::main();
    s.simulation.superpop_size = 1000;
    s.simulation.cohort_size = 100;
    s.simulation.n_replicates = 4;
    let id = client.create_scenario(&s).await.unwrap();
    assert_eq!(client.scenario(&id).await.unwrap(), s);

    let handle = client.create_run(&CreateRun::new(&id)).await.unwrap();
    let mut seen = Vec::new();
    let done = client
        .wait(&handle.run_id, Duration::from_millis(20), |h| seen.push(h.progress.completed))
        .await
        .unwrap();
    assert_eq!(done.state, RunState::Done);
    assert!(seen.windows(2).all(|w| w[0] <= w[1]));
    let bytes = client.result_bytes(&handle.run_id).await.unwrap();
    let res = client.result(&handle.run_id).await.unwrap();
    assert_eq!(res, serde_json::from_slice(&bytes).unwrap());

    match client.run("unknown").await {
        Err(e @ ClientError::Api { .. }) => assert_eq!(e.status().unwrap().as_u16(), 404),
        other => panic!("{other:?}"),
    }
    tx.send(()).unwrap();
    server.await.unwrap().unwrap();
}

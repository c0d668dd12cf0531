use std::path::PathBuf;
use std::sync::Arc;

use annotator_core::agents::{AgentId, AgentStatus};
use annotator_core::audit::AuditStore;
use annotator_core::config::{load_config, AnnotationConfig};
use annotator_core::judge::JudgeSource;
use annotator_core::knowledge_base::{ingest_catalog, load_training};
use annotator_core::pipeline::{BatchItem, BatchManager, BatchStatus, EngineOptions, GroupState, RoutingAction};
use annotator_core::prompting::recovery::ParseStage;
use annotator_core::provider::{Corruption, MockBehavior, MockFault};
use annotator_core::{Engine, ManualClock, MockProvider};

fn data(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

fn engine_for(config: AnnotationConfig, provider: MockProvider) -> annotator_core::pipeline::EngineBuilder {
    let catalog = ingest_catalog(config.catalog_path.as_ref().unwrap(), &config).unwrap();
    let training = load_training(config.training_path.as_ref().unwrap(), &catalog).unwrap();
    Engine::builder(config, catalog, Arc::new(provider)).training(training)
}

async fn faq_engine(provider: MockProvider) -> Engine {
    let config = load_config(data("banking_faq/config.json")).unwrap();
    engine_for(config, provider).build().await.unwrap()
}

#[tokio::test]
async fn lost_deb_maps_to_card_lock() {
    let engine = faq_engine(MockProvider::new(7)).await;
    let r = engine.annotate("lost deb", None).await.unwrap();
    assert_eq!(r.predicted_ids()[0], "0002");
    assert!(r.plan.needs_expansion);
    assert_eq!(r.judge.source, JudgeSource::Judge);
    assert!(r.judge.ranked.len() <= 5);
    assert!(r.judge.ranked.windows(2).all(|w| w[0].final_score >= w[1].final_score));
    assert_eq!(r.routing.action, RoutingAction::for_band(r.routing.band));
    assert!(r.runs.iter().all(|run| run.status == AgentStatus::Ok));
}

#[tokio::test]
async fn gibberish_routes_low() {
    let engine = faq_engine(MockProvider::new(7)).await;
    let r = engine.annotate("zzqx blorp", None).await.unwrap();
    assert_eq!(r.routing.action, RoutingAction::HumanReview);
}

#[tokio::test]
async fn judge_failure_falls_back_to_weighted_aggregation() {
    let behavior = MockBehavior::default().fault("judge", MockFault::Fatal);
    let engine = faq_engine(MockProvider::new(7).with_behavior(behavior)).await;
    let r = engine.annotate("lost deb", None).await.unwrap();
    assert_eq!(r.judge.source, JudgeSource::FallbackAggregation);
    assert!(!r.judge.ranked.is_empty());
    assert_eq!(r.judge.ranked[0].final_score, 100);
}

#[tokio::test]
async fn corrupt_agent_output_is_excluded() {
    let behavior = MockBehavior::default()
        .corrupt("ranker:primary_emb", Corruption::Truncated)
        .corrupt("ranker:full_emb", Corruption::Fenced);
    let engine = faq_engine(MockProvider::new(7).with_behavior(behavior)).await;
    let r = engine.annotate("lost deb", None).await.unwrap();
    let statuses = r.agent_statuses();
    assert_eq!(statuses[&AgentId::FullEmb], AgentStatus::Ok);
    let fenced = r.runs.iter().find(|run| run.agent_id == AgentId::FullEmb).unwrap();
    assert_eq!(fenced.parse_stage, Some(ParseStage::Cleaned));
    assert_ne!(statuses[&AgentId::PrimaryEmb], AgentStatus::Ok);
    assert!(r.degraded);
    assert!(!r.judge.ranked.is_empty());
}

#[tokio::test]
async fn ablation_options_skip_stages() {
    let config = load_config(data("banking_faq/config.json")).unwrap();
    let provider = MockProvider::new(7);
    let engine = engine_for(config, provider.clone())
        .options(EngineOptions {
            use_planner: false,
            use_judge: false,
            agents: vec![AgentId::FullEmb],
            shared_few_shots: false,
        })
        .build()
        .await
        .unwrap();
    let r = engine.annotate("lost deb", None).await.unwrap();
    assert_eq!(provider.calls_for("planner"), 0);
    assert_eq!(provider.calls_for("judge"), 0);
    assert_eq!(r.runs.len(), 1);
    assert_eq!(r.judge.source, JudgeSource::FallbackAggregation);
}

#[tokio::test]
async fn intent_catalog_from_csv() {
    let config = load_config(data("intents/config.json")).unwrap();
    let engine = engine_for(config, MockProvider::new(7)).build().await.unwrap();
    assert_eq!(engine.catalog().len(), 10);
    let gold = std::fs::read_to_string(data("intents/gold.jsonl")).unwrap();
    let mut hits = 0;
    let mut total = 0;
    for line in gold.lines() {
        let g: serde_json::Value = serde_json::from_str(line).unwrap();
        let r = engine.annotate(g["utterance"].as_str().unwrap(), None).await.unwrap();
        for id in r.predicted_ids() {
            assert!(engine.catalog().get(&id).is_some(), "{id} not in catalog");
        }
        total += 1;
        if r.predicted_ids().first().map(String::as_str) == g["gold_id"].as_str() {
            hits += 1;
        }
    }
    assert!(hits * 2 >= total, "top-1 {hits}/{total}");
}

#[tokio::test]
async fn audit_log_records_masked_requests() {
    let dir = tempfile::tempdir().unwrap();
    let clock = Arc::new(ManualClock::new(1_000));
    let store = Arc::new(AuditStore::open(dir.path().join("audit.jsonl"), clock.clone()).unwrap());
    let config = load_config(data("banking_faq/config.json")).unwrap();
    let engine = engine_for(config, MockProvider::new(7))
        .clock(clock)
        .audit(store.clone())
        .build()
        .await
        .unwrap();
    engine.annotate("lost card 4111 1111 1111 1111", None).await.unwrap();
    let records = store.read_all().unwrap();
    assert_eq!(records.len(), 1);
    assert!(!records[0].masked_utterance.contains("4111"));
    assert!(records[0].result_summary.is_some());
}

fn items(n: usize) -> Vec<BatchItem> {
    (0..n)
        .map(|i| BatchItem {
            id: format!("u{i:03}"),
            utterance: ["lost deb", "fees", "cash back", "pizza"][i % 4].to_string(),
        })
        .collect()
}

#[tokio::test]
async fn batch_groups_and_writes_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = load_config(data("banking_faq/config.json")).unwrap();
    config.batch_size = 4;
    let engine = engine_for(config, MockProvider::new(7)).build().await.unwrap();
    let batches = BatchManager::new(engine, Some(dir.path().to_path_buf()));
    let job = batches.submit(items(10)).unwrap();
    assert_eq!(job.groups.iter().map(|g| g.size).collect::<Vec<_>>(), [4, 4, 2]);
    let done = batches.run(&job.job_id).await.unwrap();
    assert_eq!(done.status, BatchStatus::Complete);
    let results = batches.results(&job.job_id).unwrap();
    assert_eq!(results.len(), 10);
    assert_eq!(results[0].id, "u000");
    let written = std::fs::read_to_string(done.output_path.unwrap()).unwrap();
    assert_eq!(written.lines().count(), 10);
}

#[tokio::test]
async fn batch_window_expires_pending_groups() {
    let clock = Arc::new(ManualClock::new(0));
    let mut config = load_config(data("banking_faq/config.json")).unwrap();
    config.batch_size = 2;
    config.batch_window_s = 60;
    let engine = engine_for(config, MockProvider::new(7)).clock(clock.clone()).build().await.unwrap();
    let batches = BatchManager::new(engine, None);
    let job = batches.submit(items(6)).unwrap();
    batches.step(&job.job_id).await.unwrap();
    clock.advance_ms(61_000);
    let view = batches.run(&job.job_id).await.unwrap();
    assert_eq!(view.status, BatchStatus::ExpiredPartial);
    assert_eq!(view.groups[0].state, GroupState::Done);
    assert!(view.groups[1..].iter().all(|g| g.state == GroupState::Expired));
    assert_eq!(view.expired_pending, ["u002", "u003", "u004", "u005"]);
    assert_eq!(batches.results(&job.job_id).unwrap().len(), 2);
}

use dohpool::live::run_live;
use dohpool_core::sim::{run_scenario, AttackScenario, Strategy};
use dohpool_core::CombinePolicy;

#[tokio::test]
async fn live_run_matches_in_memory_run() {
    let mut scenario = AttackScenario::new(4, [1], Strategy::Overwhelm { list_length: 40 });
    scenario.jitter = true;
    scenario.seed = 11;
    let policy = CombinePolicy::strict(4);
    let live = run_live(&scenario, policy).await.unwrap();
    let offline = run_scenario(&scenario, policy).unwrap();
    assert_eq!(live.pool, offline.pool);
    assert_eq!(live.attacker_entries, 4);
    assert_eq!(live.pool.len(), 16);
    assert_eq!(live.notes, offline.notes);
}

#[tokio::test]
async fn live_starvation_empties_the_pool() {
    let scenario = AttackScenario::new(3, [2], Strategy::Starve);
    let live = run_live(&scenario, CombinePolicy::strict(3)).await.unwrap();
    assert!(live.pool.is_empty());
    assert!(!live.servfail);

    let lenient = CombinePolicy {
        min_responders: 2,
        empty_is_failure: true,
    };
    let live = run_live(&scenario, lenient).await.unwrap();
    assert_eq!(live.pool.len(), 8);
    assert_eq!(live.attacker_entries, 0);
}

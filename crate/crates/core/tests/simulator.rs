use std::fs;
use std::path::{Path, PathBuf};

use qotsim::policy::ConstantPolicy;
use qotsim::postprocess::RoundingPostProcessor;
use qotsim::sim::{rollout_batch, CostBasis, Dynamics, RewardConfig, RolloutSpec};
use qotsim::world::{export_world, import_world, WorldError};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/two_period")
}

// Hand-worked: initial stock 3, order 8 each period.
// t=0: supply 6 splits 3 now, 3 next; on hand 6, sells 5, keeps 1; reward 2*5 - 6 = 4.
// t=1: unlimited, all 8 now; on hand 1 + 3 + 8 = 12, sells 4, keeps 8; reward 3*4 - 8 = 4.
#[test]
fn two_period_replay_matches_hand_computation() {
    let world = import_world(fixture()).unwrap();
    let policy = ConstantPolicy::new(8.0);
    let spec = RolloutSpec::new(&world, &policy, Dynamics::ReplayTruth)
        .postprocessor(&RoundingPostProcessor)
        .reward(RewardConfig::new(0.5, CostBasis::ChargedOnFill).unwrap())
        .seed(0);
    let result = rollout_batch(&spec).unwrap();
    let tr = &result.trajectories[0];
    let r0 = &tr.records[0];
    assert_eq!(r0.scheduled, vec![3.0, 3.0]);
    assert_eq!((r0.on_hand_before, r0.fulfilled, r0.inventory, r0.lost_sales), (6.0, 5.0, 1.0, 0.0));
    assert_eq!((r0.charged, r0.reward), (6.0, 4.0));
    let r1 = &tr.records[1];
    assert_eq!(r1.received, 11.0);
    assert_eq!((r1.on_hand_before, r1.fulfilled, r1.inventory), (12.0, 4.0, 8.0));
    assert_eq!((r1.charged, r1.reward), (8.0, 4.0));
    assert_eq!(tr.total, 6.0);
    assert_eq!(tr.recompute_total(), 6.0);
}

#[test]
fn charging_on_order_bills_the_unfilled_part() {
    let world = import_world(fixture()).unwrap();
    let policy = ConstantPolicy::new(8.0);
    let spec = RolloutSpec::new(&world, &policy, Dynamics::ReplayTruth)
        .postprocessor(&RoundingPostProcessor)
        .reward(RewardConfig::new(1.0, CostBasis::ChargedOnOrder).unwrap());
    let tr = &rollout_batch(&spec).unwrap().trajectories[0];
    assert_eq!(tr.records[0].reward, 2.0);
    assert_eq!(tr.total, 6.0);
}

#[test]
fn export_then_import_round_trips() {
    let world = import_world(fixture()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    export_world(&world, tmp.path()).unwrap();
    assert_eq!(import_world(tmp.path()).unwrap(), world);
}

#[test]
fn bad_shares_name_the_file_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    for e in fs::read_dir(fixture()).unwrap() {
        let e = e.unwrap();
        fs::copy(e.path(), tmp.path().join(e.file_name())).unwrap();
    }
    fs::write(tmp.path().join("shares.csv"), "product_id,t,rho_0,rho_1\n0,0,0.5,0.5\n0,1,0.7,0\n").unwrap();
    match import_world(tmp.path()) {
        Err(WorldError::SharesSum { t, file, line, .. }) => {
            assert_eq!(t, 1);
            assert_eq!(file.as_deref(), Some("shares.csv"));
            assert_eq!(line, Some(3));
        }
        other => panic!("expected a shares error, got {other:?}"),
    }
}

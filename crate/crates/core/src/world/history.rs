use serde::{Deserialize, Serialize};

use super::{World, WorldError};
use crate::postprocess::VendorConstraints;

/// Cap on the reported distance to the next holiday.
pub const HOLIDAY_DISTANCE_CAP: usize = 26;

/// What is known about product `product` when ordering at period `t`:
/// observed series for periods `start..t`, past actions and receipts, and
/// static codes. Supply and arrival shares are never observed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistorySlice {
    pub product: usize,
    pub t: usize,
    pub start: usize,
    pub vendor: usize,
    pub group: usize,
    pub initial_inventory: f64,
    /// From the static calendar, so known in advance.
    pub holiday_distance: usize,
    pub demand: Vec<f64>,
    pub price: Vec<f64>,
    pub cost: Vec<f64>,
    pub constraints: Vec<VendorConstraints>,
    /// Vendor terms in force for the order being placed at `t`.
    pub order_constraints: VendorConstraints,
    pub actions: Vec<f64>,
    /// Quantity received in each period.
    pub arrivals: Vec<f64>,
}

impl HistorySlice {
    pub fn len(&self) -> usize {
        self.t - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.t == self.start
    }
}

/// Full history before `t`; `past_actions` and `past_arrivals` cover periods `0..t`.
pub fn slice_history(
    world: &World,
    product: usize,
    t: usize,
    past_actions: &[f64],
    past_arrivals: &[f64],
) -> Result<HistorySlice, WorldError> {
    slice_history_window(world, product, t, usize::MAX, past_actions, past_arrivals)
}

/// As [`slice_history`] but keeping only the last `window` periods.
pub fn slice_history_window(
    world: &World,
    product: usize,
    t: usize,
    window: usize,
    past_actions: &[f64],
    past_arrivals: &[f64],
) -> Result<HistorySlice, WorldError> {
    if product >= world.num_products() {
        return Err(WorldError::UnknownProduct(product));
    }
    if t >= world.horizon() {
        return Err(WorldError::PeriodOutOfRange {
            t,
            horizon: world.horizon() - 1,
        });
    }
    for (what, v) in [("past actions", past_actions), ("past arrivals", past_arrivals)] {
        if v.len() != t {
            return Err(WorldError::Length {
                what,
                got: v.len(),
                expected: t,
            });
        }
    }
    let start = t.saturating_sub(window);
    let past = &world.states(product)[start..t];
    let p = world.product(product);
    Ok(HistorySlice {
        product,
        t,
        start,
        vendor: p.vendor,
        group: p.group,
        initial_inventory: p.initial_inventory,
        holiday_distance: world.holiday_distance(t, HOLIDAY_DISTANCE_CAP),
        demand: past.iter().map(|s| s.demand).collect(),
        price: past.iter().map(|s| s.price).collect(),
        cost: past.iter().map(|s| s.cost).collect(),
        constraints: past.iter().map(|s| s.constraints).collect(),
        order_constraints: world.state(product, t).constraints,
        actions: past_actions[start..].to_vec(),
        arrivals: past_arrivals[start..].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_world, Supply, WorldConfig};

    fn world() -> World {
        generate_world(&WorldConfig::multi_shipment(2, 12), 4).unwrap()
    }

    #[test]
    fn first_period_has_only_static_features() {
        let s = slice_history(&world(), 1, 0, &[], &[]).unwrap();
        assert!(s.is_empty());
        assert!(s.demand.is_empty() && s.actions.is_empty());
        assert_eq!(s.vendor, 1);
    }

    #[test]
    fn echoes_past_actions() {
        let acts = [1.0, 2.0, 3.0, 4.0];
        let s = slice_history(&world(), 0, 4, &acts, &[0.0; 4]).unwrap();
        assert_eq!(s.actions, acts);
        assert_eq!(s.demand.len(), 4);
    }

    #[test]
    fn window_keeps_latest_periods() {
        let acts: Vec<f64> = (0..8).map(f64::from).collect();
        let s = slice_history_window(&world(), 0, 8, 3, &acts, &[0.0; 8]).unwrap();
        assert_eq!(s.actions, vec![5.0, 6.0, 7.0]);
        assert_eq!(s.start, 5);
    }

    #[test]
    fn rejects_bad_requests() {
        let w = world();
        assert!(slice_history(&w, 0, 12, &[0.0; 12], &[0.0; 12]).is_err());
        assert!(slice_history(&w, 5, 0, &[], &[]).is_err());
        assert!(slice_history(&w, 0, 3, &[0.0; 2], &[0.0; 3]).is_err());
    }

    #[test]
    fn payload_never_mentions_supply_or_shares() {
        let w = world();
        let s = slice_history(&w, 0, 6, &[1.0; 6], &[1.0; 6]).unwrap();
        let json = serde_json::to_value(&s).unwrap();
        fn keys(v: &serde_json::Value, out: &mut Vec<String>) {
            match v {
                serde_json::Value::Object(m) => {
                    for (k, x) in m {
                        out.push(k.clone());
                        keys(x, out);
                    }
                }
                serde_json::Value::Array(a) => a.iter().for_each(|x| keys(x, out)),
                _ => {}
            }
        }
        let mut all = Vec::new();
        keys(&json, &mut all);
        for k in all {
            assert!(!k.contains("supply") && !k.contains("share") && !k.contains("rho"), "{k}");
        }
    }

    #[test]
    fn no_lookahead_under_mutation() {
        let w = world();
        let t = 5;
        let before = serde_json::to_string(&slice_history(&w, 0, t, &[0.0; 5], &[0.0; 5]).unwrap()).unwrap();
        let mut m = w.clone();
        for u in t..w.horizon() {
            let mut s = m.state(0, u).clone();
            s.demand += 100.0;
            s.price += 1.0;
            s.supply = Supply::Finite(0.0);
            m.replace_state(0, u, s).unwrap();
        }
        let after = serde_json::to_string(&slice_history(&m, 0, t, &[0.0; 5], &[0.0; 5]).unwrap()).unwrap();
        assert_eq!(before, after);
    }
}

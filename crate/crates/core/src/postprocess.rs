//! Order-quantity post-processing against vendor constraints.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PostprocessError {
    #[error("order quantity must be finite and nonnegative, got {0}")]
    InvalidQuantity(f64),
    #[error("invalid vendor constraints: {0}")]
    InvalidConstraints(String),
}

/// Vendor-imposed order constraints. `batch_size == 0` means no batching;
/// `max_order_qty == None` means unbounded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VendorConstraints {
    pub min_order_qty: f64,
    pub batch_size: f64,
    pub max_order_qty: Option<f64>,
}

impl Default for VendorConstraints {
    fn default() -> Self {
        Self::unconstrained()
    }
}

impl VendorConstraints {
    pub fn new(
        min_order_qty: f64,
        batch_size: f64,
        max_order_qty: Option<f64>,
    ) -> Result<Self, PostprocessError> {
        let c = Self {
            min_order_qty,
            batch_size,
            max_order_qty,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn unconstrained() -> Self {
        Self {
            min_order_qty: 0.0,
            batch_size: 0.0,
            max_order_qty: None,
        }
    }

    pub fn validate(&self) -> Result<(), PostprocessError> {
        let bad = |msg: String| Err(PostprocessError::InvalidConstraints(msg));
        if !(self.min_order_qty >= 0.0 && self.min_order_qty.is_finite()) {
            return bad(format!("min_order_qty {}", self.min_order_qty));
        }
        if !(self.batch_size >= 0.0 && self.batch_size.is_finite()) {
            return bad(format!("batch_size {}", self.batch_size));
        }
        if let Some(max) = self.max_order_qty {
            if !(max >= 0.0) || max.is_nan() {
                return bad(format!("max_order_qty {max}"));
            }
            if self.min_order_qty > max {
                return bad(format!(
                    "min_order_qty {} exceeds max_order_qty {max}",
                    self.min_order_qty
                ));
            }
        }
        Ok(())
    }

    pub fn is_unconstrained(&self) -> bool {
        self.min_order_qty == 0.0 && self.batch_size == 0.0 && self.max_order_qty.is_none()
    }

    /// Whether `q` is zero or satisfies every constraint.
    pub fn admits(&self, q: f64) -> bool {
        if q == 0.0 {
            return true;
        }
        let batch_ok = self.batch_size == 0.0 || {
            let k = (q / self.batch_size).round();
            (q - k * self.batch_size).abs() <= 1e-9 * q.max(1.0)
        };
        q >= self.min_order_qty && batch_ok && self.max_order_qty.is_none_or(|m| q <= m)
    }
}

/// Deterministic map from a raw order and the period's constraints to the
/// quantity requested from the vendor.
pub trait PostProcessor: Send + Sync {
    fn apply(&self, order: f64, constraints: &VendorConstraints) -> Result<f64, PostprocessError>;

    /// Derivative used in place of the true (piecewise-constant) one when
    /// gradients flow through the processed order. Defaults to 1 except
    /// above the maximum order quantity, where raising the raw order has no
    /// effect.
    fn surrogate_slope(&self, order: f64, constraints: &VendorConstraints) -> f64 {
        match constraints.max_order_qty {
            Some(m) if order > m => 0.0,
            _ => 1.0,
        }
    }
}

/// Passes orders through unchanged (after validation).
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityPostProcessor;

impl PostProcessor for IdentityPostProcessor {
    fn apply(&self, order: f64, _: &VendorConstraints) -> Result<f64, PostprocessError> {
        check_order(order)?;
        Ok(order)
    }

    fn surrogate_slope(&self, _: f64, _: &VendorConstraints) -> f64 {
        1.0
    }
}

/// Heuristic rounding: half-threshold minimum order quantity, nearest batch
/// multiple (ties up), then cap at the maximum.
#[derive(Clone, Copy, Debug, Default)]
pub struct RoundingPostProcessor;

impl PostProcessor for RoundingPostProcessor {
    fn apply(&self, order: f64, constraints: &VendorConstraints) -> Result<f64, PostprocessError> {
        apply_postprocessor(order, constraints)
    }
}

fn check_order(order: f64) -> Result<(), PostprocessError> {
    if order.is_finite() && order >= 0.0 {
        Ok(())
    } else {
        Err(PostprocessError::InvalidQuantity(order))
    }
}

fn smallest_multiple_at_least(x: f64, batch: f64) -> f64 {
    (x / batch).ceil() * batch
}

pub fn apply_postprocessor(order: f64, m: &VendorConstraints) -> Result<f64, PostprocessError> {
    check_order(order)?;
    m.validate()?;
    if order == 0.0 {
        return Ok(0.0);
    }
    let moq = m.min_order_qty;
    let mut q = order;
    if q < moq {
        q = if q < moq / 2.0 { 0.0 } else { moq };
    }
    if q > 0.0 && m.batch_size > 0.0 {
        q = (q / m.batch_size + 0.5).floor() * m.batch_size;
        if q > 0.0 && q < moq {
            q = smallest_multiple_at_least(moq, m.batch_size);
        }
    }
    if let Some(max) = m.max_order_qty {
        if q > max {
            q = if m.batch_size > 0.0 {
                (max / m.batch_size).floor() * m.batch_size
            } else {
                max
            };
            // no feasible positive quantity below the cap
            if q < moq || q <= 0.0 {
                q = 0.0;
            }
        }
    }
    Ok(q)
}

//! Team-Draft, Probabilistic and Optimized interleaving.

mod oi;
mod pi;
mod tdi;

pub use oi::{oi_outcome, oi_plan, OiPlan, OI_CAP};
pub use pi::{pi_enumerate, pi_expected_outcome, pi_interleave, pi_interleaving_prob, pi_posteriors, PiConfig};
pub use tdi::{tdi_enumerate, tdi_interleave, tdi_outcome, TdiResult};

use crate::error::{Error, Result};
use crate::model::{DocId, Ranking};

/// Both rankings must order the same documents.
fn check_candidates(r1: &Ranking, r2: &Ranking) -> Result<()> {
    let mut a: Vec<DocId> = r1.docs().to_vec();
    let mut b: Vec<DocId> = r2.docs().to_vec();
    a.sort_unstable();
    b.sort_unstable();
    if a != b {
        return Err(Error::invalid("interleaved rankings must share one candidate set"));
    }
    Ok(())
}

fn check_clicks(displayed: usize, clicks: &[bool]) -> Result<()> {
    if clicks.len() != displayed {
        return Err(Error::invalid(format!(
            "click pattern has {} entries for {displayed} displayed documents",
            clicks.len()
        )));
    }
    Ok(())
}

//! End-point error split by occlusion region.

use serde::{Deserialize, Serialize};

use crate::flow::{FlowField, OcclusionMask};
use crate::{Error, Result};

pub const CSV_HEADER: &str = "id,epe_all,epe_noc,epe_occ,n_all,n_noc,n_occ";

/// Mean end-point error over all, non-occluded and occluded pixels.
///
/// A region with no pixels reports `None` rather than a fabricated zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpeReport {
    pub id: String,
    pub epe_all: f64,
    pub epe_noc: Option<f64>,
    pub epe_occ: Option<f64>,
    pub n_all: usize,
    pub n_noc: usize,
    pub n_occ: usize,
}

impl EpeReport {
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn to_csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.id,
            self.epe_all,
            opt(self.epe_noc),
            opt(self.epe_occ),
            self.n_all,
            self.n_noc,
            self.n_occ
        )
    }
}

fn mean(sum: f64, n: usize) -> Option<f64> {
    (n > 0).then(|| sum / n as f64)
}

pub fn epe(estimate: &FlowField, gt: &FlowField, occ_gt: &OcclusionMask) -> Result<EpeReport> {
    for found in [gt.dims(), occ_gt.dims()] {
        if found != estimate.dims() {
            return Err(Error::DimensionMismatch {
                expected: estimate.dims(),
                found,
            });
        }
    }
    let (mut sum_noc, mut sum_occ) = (0.0f64, 0.0f64);
    let (mut n_noc, mut n_occ) = (0usize, 0usize);
    for (i, (e, g)) in estimate.vectors().zip(gt.vectors()).enumerate() {
        let err = (e[0] as f64 - g[0] as f64).hypot(e[1] as f64 - g[1] as f64);
        if occ_gt.as_slice()[i] != 0 {
            sum_occ += err;
            n_occ += 1;
        } else {
            sum_noc += err;
            n_noc += 1;
        }
    }
    let n_all = n_noc + n_occ;
    Ok(EpeReport {
        id: String::new(),
        epe_all: (sum_noc + sum_occ) / n_all as f64,
        epe_noc: mean(sum_noc, n_noc),
        epe_occ: mean(sum_occ, n_occ),
        n_all,
        n_noc,
        n_occ,
    })
}

/// Pixel-count-weighted means across reports, in input order.
pub fn aggregate(reports: &[EpeReport]) -> Result<EpeReport> {
    if reports.is_empty() {
        return Err(Error::EmptyReports);
    }
    let (mut sum_all, mut sum_noc, mut sum_occ) = (0.0f64, 0.0f64, 0.0f64);
    let (mut n_all, mut n_noc, mut n_occ) = (0usize, 0usize, 0usize);
    for r in reports {
        sum_all += r.epe_all * r.n_all as f64;
        sum_noc += r.epe_noc.unwrap_or(0.0) * r.n_noc as f64;
        sum_occ += r.epe_occ.unwrap_or(0.0) * r.n_occ as f64;
        n_all += r.n_all;
        n_noc += r.n_noc;
        n_occ += r.n_occ;
    }
    Ok(EpeReport {
        id: "aggregate".into(),
        epe_all: sum_all / n_all as f64,
        epe_noc: mean(sum_noc, n_noc),
        epe_occ: mean(sum_occ, n_occ),
        n_all,
        n_noc,
        n_occ,
    })
}

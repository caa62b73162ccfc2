//! Plot-ready data series.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpformat::FpFormat;
use crate::implications::{self, ComputeBudget};
use crate::lawmodels::{self, LawConstants};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveKind {
    LossVsD,
    LossVsN,
    PoptVsC,
    DcritTable,
    LayoutTable,
}

impl CurveKind {
    pub fn name(&self) -> &'static str {
        match self {
            CurveKind::LossVsD => "loss-vs-D",
            CurveKind::LossVsN => "loss-vs-N",
            CurveKind::PoptVsC => "popt-vs-C",
            CurveKind::DcritTable => "dcrit-table",
            CurveKind::LayoutTable => "layout-table",
        }
    }

    fn needs_grid(&self) -> bool {
        matches!(self, CurveKind::LossVsD | CurveKind::LossVsN | CurveKind::PoptVsC)
    }
}

impl fmt::Display for CurveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CurveKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [
            CurveKind::LossVsD,
            CurveKind::LossVsN,
            CurveKind::PoptVsC,
            CurveKind::DcritTable,
            CurveKind::LayoutTable,
        ]
        .into_iter()
        .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
        .ok_or_else(|| Error::Config(format!("unknown curve kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    #[default]
    Log,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
    pub spacing: Spacing,
}

impl GridSpec {
    pub fn log(min: f64, max: f64, points: usize) -> Self {
        GridSpec {
            min,
            max,
            points,
            spacing: Spacing::Log,
        }
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        if self.points < 2 {
            return Err(Error::Config("a grid needs at least 2 points".into()));
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(Error::Config("grid needs finite min < max".into()));
        }
        if self.spacing == Spacing::Log && self.min <= 0.0 {
            return Err(Error::Config("log grids need min > 0".into()));
        }
        let last = (self.points - 1) as f64;
        Ok((0..self.points)
            .map(|i| {
                let t = i as f64 / last;
                match self.spacing {
                    Spacing::Linear => self.min + t * (self.max - self.min),
                    Spacing::Log => (self.min.ln() + t * (self.max.ln() - self.min.ln())).exp(),
                }
            })
            .map(|v| v.clamp(self.min, self.max))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRequest {
    pub kind: CurveKind,
    pub grid: Option<GridSpec>,
    pub n: Option<f64>,
    pub d: Option<f64>,
    pub log2b: f64,
    pub k: f64,
    pub formats: Vec<FpFormat>,
    pub bits: Vec<u32>,
    pub constants: LawConstants,
}

impl CurveRequest {
    pub fn new(kind: CurveKind, constants: LawConstants) -> Self {
        CurveRequest {
            kind,
            grid: None,
            n: None,
            d: None,
            log2b: implications::DEFAULT_LOG2B,
            k: implications::DEFAULT_K,
            formats: vec![FpFormat::E8M7, FpFormat::E4M3, FpFormat::E2M1],
            bits: vec![4, 8, 16],
            constants,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub kind: CurveKind,
    pub x_name: String,
    pub y_name: String,
    pub series: Vec<Series>,
}

impl Curve {
    /// `series,x,y` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("series,x,y\n");
        for s in &self.series {
            for (x, y) in &s.points {
                out.push_str(&format!("{},{x},{y}\n", s.label));
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.series.iter().map(|s| s.points.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Reads back the output of [`Curve::to_csv`] as `(series, x, y)` rows.
pub fn parse_curve_csv(src: &str) -> Result<Vec<(String, f64, f64)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(src.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(1, 1, e.to_string()))?;
    if headers != vec!["series", "x", "y"] {
        return Err(Error::parse(1, 1, "header must be `series,x,y`"));
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| Error::parse(0, 1, e.to_string()))?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let num = |i: usize| {
            row[i]
                .parse::<f64>()
                .map_err(|_| Error::parse(line, i + 1, format!("bad number {:?}", &row[i])))
        };
        out.push((row[0].to_string(), num(1)?, num(2)?));
    }
    Ok(out)
}

fn unbound(kind: CurveKind, what: &str) -> Error {
    Error::Config(format!("{kind} needs {what}"))
}

pub fn build_curve(req: &CurveRequest) -> Result<Curve> {
    req.constants.validate()?;
    let c = &req.constants;
    let grid = if req.kind.needs_grid() {
        req.grid.ok_or_else(|| unbound(req.kind, "a sweep grid"))?.values()?
    } else {
        Vec::new()
    };
    let (x_name, y_name, series) = match req.kind {
        CurveKind::LossVsD => {
            let n = req.n.ok_or_else(|| unbound(req.kind, "N"))?;
            let mut series = Vec::new();
            for f in &req.formats {
                let (e, m) = (f.exponent_bits() as f64, f.mantissa_bits() as f64);
                let points: Vec<_> = grid
                    .iter()
                    .map(|&d| (d, lawmodels::capybara_loss(n, d, e, m, req.log2b, c)))
                    .collect();
                if req.log2b > 0.0 {
                    let dcrit = implications::critical_data_size(n, e, m, req.log2b, c)?;
                    check_minimum(&points, dcrit, &f.to_string())?;
                }
                series.push(Series {
                    label: f.to_string(),
                    points,
                });
            }
            ("D", "loss", series)
        }
        CurveKind::LossVsN => {
            let d = req.d.ok_or_else(|| unbound(req.kind, "D"))?;
            let series = req
                .formats
                .iter()
                .map(|f| {
                    let (e, m) = (f.exponent_bits() as f64, f.mantissa_bits() as f64);
                    Series {
                        label: f.to_string(),
                        points: grid
                            .iter()
                            .map(|&n| (n, lawmodels::capybara_loss(n, d, e, m, req.log2b, c)))
                            .collect(),
                    }
                })
                .collect();
            ("N", "loss", series)
        }
        CurveKind::PoptVsC => {
            let points = grid
                .iter()
                .map(|&budget| {
                    let mut b = ComputeBudget::new(budget);
                    b.k = req.k;
                    implications::p_opt_joint(&b, req.log2b, c).map(|o| (budget, o.p))
                })
                .collect::<Result<Vec<_>>>()?;
            (
                "C",
                "P_opt",
                vec![Series {
                    label: format!("log2B={}", req.log2b),
                    points,
                }],
            )
        }
        CurveKind::DcritTable => {
            let n = req.n.ok_or_else(|| unbound(req.kind, "N"))?;
            let series = req
                .formats
                .iter()
                .map(|f| {
                    let d = implications::critical_data_size(
                        n,
                        f.exponent_bits() as f64,
                        f.mantissa_bits() as f64,
                        req.log2b,
                        c,
                    )?;
                    Ok(Series {
                        label: f.to_string(),
                        points: vec![(n, d)],
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            ("N", "D_crit", series)
        }
        CurveKind::LayoutTable => {
            if req.bits.is_empty() {
                return Err(unbound(req.kind, "at least one bit width"));
            }
            let series = req
                .bits
                .iter()
                .map(|&p| {
                    let (e, m) = implications::optimal_layout_int(p, c)?;
                    Ok(Series {
                        label: format!("E{e}M{m}"),
                        points: vec![(p as f64, implications::optimal_mantissa(p as f64, c)?)],
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            ("P", "M_opt", series)
        }
    };
    Ok(Curve {
        kind: req.kind,
        x_name: x_name.into(),
        y_name: y_name.into(),
        series,
    })
}

/// When `dcrit` lies inside the sweep, the sampled minimum must bracket it.
fn check_minimum(points: &[(f64, f64)], dcrit: f64, label: &str) -> Result<()> {
    let (first, last) = (points[0].0, points[points.len() - 1].0);
    if dcrit <= first || dcrit >= last {
        return Ok(());
    }
    let i = (0..points.len())
        .min_by(|&a, &b| points[a].1.total_cmp(&points[b].1))
        .unwrap();
    let lo = points[i.saturating_sub(1)].0;
    let hi = points[(i + 1).min(points.len() - 1)].0;
    if dcrit < lo || dcrit > hi {
        return Err(Error::Numeric(format!(
            "{label}: sampled minimum near D={} does not bracket D_crit={dcrit}",
            points[i].0
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(kind: CurveKind) -> CurveRequest {
        CurveRequest::new(kind, LawConstants::capybara_paper())
    }

    #[test]
    fn grid_validation() {
        assert_eq!(GridSpec::log(1.0, 100.0, 3).values().unwrap(), vec![1.0, 10.000000000000002, 100.0]);
        assert!(GridSpec::log(1.0, 100.0, 1).values().is_err());
        assert!(GridSpec::log(0.0, 100.0, 4).values().is_err());
    }

    #[test]
    fn popt_series_is_monotone_and_in_range() {
        let mut r = req(CurveKind::PoptVsC);
        r.grid = Some(GridSpec::log(1e21, 1e31, 41));
        let c = build_curve(&r).unwrap();
        let pts = &c.series[0].points;
        assert!(pts.windows(2).all(|w| w[1].1 > w[0].1));
        assert!(pts.iter().all(|p| (3.5..=8.5).contains(&p.1)));
    }

    #[test]
    fn loss_vs_d_minimum_brackets_dcrit_and_round_trips() {
        let mut r = req(CurveKind::LossVsD);
        r.n = Some(1e9);
        r.grid = Some(GridSpec::log(1e10, 1e16, 200));
        let c = build_curve(&r).unwrap();
        assert_eq!(c.len(), 600);
        let back = parse_curve_csv(&c.to_csv()).unwrap();
        assert_eq!(back.len(), 600);
        assert_eq!(back[5].1, c.series[0].points[5].0);
        assert_eq!(back[5].2, c.series[0].points[5].1);
    }

    #[test]
    fn unbound_and_degenerate_requests() {
        let r = req(CurveKind::LossVsD);
        assert!(matches!(build_curve(&r), Err(Error::Config(_))));
        let mut r = req(CurveKind::LossVsN);
        r.d = Some(1e11);
        r.grid = Some(GridSpec::log(1e8, 1e9, 2));
        r.formats = vec![FpFormat::E4M3];
        assert_eq!(build_curve(&r).unwrap().len(), 2);
        assert!("scatter".parse::<CurveKind>().is_err());
    }

    #[test]
    fn tables() {
        let mut r = req(CurveKind::DcritTable);
        r.n = Some(1e9);
        let t = build_curve(&r).unwrap();
        let d: Vec<f64> = t.series.iter().map(|s| s.points[0].1).collect();
        assert!(d[0] > d[1] && d[1] > d[2]);
        let l = build_curve(&req(CurveKind::LayoutTable)).unwrap();
        let labels: Vec<_> = l.series.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, ["E2M1", "E4M3", "E8M7"]);
    }
}

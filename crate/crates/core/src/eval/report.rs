use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{summarize, EvalError, EvalRecord, EvalSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Winner {
    Drl,
    Pso,
    Tie,
}

impl Winner {
    pub fn as_str(&self) -> &'static str {
        match self {
            Winner::Drl => "drl",
            Winner::Pso => "pso",
            Winner::Tie => "tie",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub drl_best: f64,
    pub pso_best: f64,
    pub winner: Winner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub drl: EvalSummary,
    pub pso: EvalSummary,
    /// Mean wall time per airfoil, seconds.
    pub drl_wall_per_airfoil: f64,
    pub pso_wall_per_airfoil: f64,
    pub speedup: f64,
    pub drl_wins: usize,
    pub pso_wins: usize,
    pub ties: usize,
}

fn mean_wall(records: &[EvalRecord]) -> f64 {
    records.iter().map(|r| r.wall_time_s).sum::<f64>() / records.len() as f64
}

/// Side-by-side bests for the airfoils both methods converged on.
pub fn compare_report(drl: &[EvalRecord], pso: &[EvalRecord]) -> Result<ComparisonReport, EvalError> {
    if drl.is_empty() || pso.is_empty() {
        return Err(EvalError::Empty);
    }
    let pso_by_name: BTreeMap<&str, &EvalRecord> = pso.iter().map(|r| (r.name.as_str(), r)).collect();
    let mut rows = Vec::new();
    for d in drl.iter().filter(|r| r.converged) {
        let Some(p) = pso_by_name.get(d.name.as_str()).filter(|p| p.converged) else {
            continue;
        };
        let winner = if d.best_ratio > p.best_ratio {
            Winner::Drl
        } else if p.best_ratio > d.best_ratio {
            Winner::Pso
        } else {
            Winner::Tie
        };
        rows.push(ComparisonRow {
            name: d.name.clone(),
            drl_best: d.best_ratio,
            pso_best: p.best_ratio,
            winner,
        });
    }
    rows.sort_by(|a, b| a.name.cmp(&b.name));
    let count = |w: Winner| rows.iter().filter(|r| r.winner == w).count();
    let (dw, pw) = (mean_wall(drl), mean_wall(pso));
    Ok(ComparisonReport {
        drl_wins: count(Winner::Drl),
        pso_wins: count(Winner::Pso),
        ties: count(Winner::Tie),
        rows,
        drl: summarize(drl)?,
        pso: summarize(pso)?,
        drl_wall_per_airfoil: dw,
        pso_wall_per_airfoil: pw,
        speedup: if dw > 0.0 { pw / dw } else { f64::INFINITY },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub label: String,
    pub delta_mt_percent: f64,
    pub best: f64,
    pub pareto: bool,
}

/// Flag the points not dominated in (lower ΔMT, higher best).
pub fn pareto_front(points: &[(String, f64, f64)]) -> Vec<ParetoPoint> {
    points
        .iter()
        .map(|(label, dmt, best)| {
            let dominated = points.iter().any(|(_, d2, b2)| {
                d2 <= dmt && b2 >= best && (d2 < dmt || b2 > best)
            });
            ParetoPoint {
                label: label.clone(),
                delta_mt_percent: *dmt,
                best: *best,
                pareto: !dominated,
            }
        })
        .collect()
}

pub fn write_csv<T: Serialize, W: std::io::Write>(rows: &[T], out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| EvalError::Other(e.to_string()))?;
    }
    w.flush().map_err(|e| EvalError::Other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(name: &str, best: f64) -> EvalRecord {
        EvalRecord {
            name: name.into(),
            converged: true,
            initial_ratio: 10.0,
            best_ratio: best,
            improvement: best - 10.0,
            mt_initial: 0.1,
            mt_at_best: 0.1,
            delta_mt_percent: 0.0,
            best_step: 3,
            episode_length: 100,
            termination: "max_steps".into(),
            wall_time_s: 0.5,
        }
    }

    #[test]
    fn identical_sets_tie_everywhere() {
        let a = vec![rec("a", 20.0), rec("b", 30.0)];
        let r = compare_report(&a, &a).unwrap();
        assert!(r.rows.iter().all(|x| x.winner == Winner::Tie));
        assert_eq!(r.ties, 2);
        assert_eq!(r.speedup, 1.0);
    }

    #[test]
    fn winner_markers() {
        let d = vec![rec("a", 20.0), rec("b", 30.0)];
        let p = vec![rec("a", 25.0), rec("b", 29.0)];
        let r = compare_report(&d, &p).unwrap();
        assert_eq!(r.rows[0].winner, Winner::Pso);
        assert_eq!(r.rows[1].winner, Winner::Drl);
        assert!(compare_report(&[], &p).is_err());
    }

    #[test]
    fn sigma_sweep_points_all_pareto() {
        let pts = vec![
            ("0".to_string(), 64.0, 241.0),
            ("15".to_string(), 12.0, 180.0),
            ("100".to_string(), 5.0, 176.0),
        ];
        assert!(pareto_front(&pts).iter().all(|p| p.pareto));
    }

    #[test]
    fn dominated_point_excluded() {
        let pts = vec![("a".to_string(), 5.0, 200.0), ("b".to_string(), 10.0, 150.0)];
        let f = pareto_front(&pts);
        assert!(f[0].pareto && !f[1].pareto);
    }
}

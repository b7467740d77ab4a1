//! Pilot power allocation minimising the average normalised channel PCRB.
//!
//! The problem is
//!
//! ```text
//! minimise   sum_u N_u P (P_u + Phi_u)^{-1}
//! subject to sum_u P_u = P_total,  P_u >= 0
//! ```
//!
//! Stationarity of the Lagrangian gives `P_u = sqrt(P N_u / lambda) - Phi_u`
//! and the budget fixes `lambda = P (sum sqrt(N_u) / (P_total + sum Phi_u))^2`.
//! Users whose closed-form power comes out negative are clamped to zero and
//! the system is re-solved over the remaining users.

use std::collections::BTreeSet;
use std::io::Write;

use crate::error::{Error, Result};

/// Prior information `Phi_u` and normalisation factor `N_u` of one user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserTerms {
    pub phi: f64,
    pub n_u: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationProblem {
    /// Total pilot power (linear).
    pub total_power: f64,
    pub users: Vec<UserTerms>,
    /// Paths per user.
    pub paths: usize,
}

impl AllocationProblem {
    pub fn new(total_power: f64, users: Vec<UserTerms>, paths: usize) -> Result<Self> {
        if !(total_power > 0.0 && total_power.is_finite()) {
            return Err(Error::InvalidConfig(format!("total pilot power must be positive, got {total_power}")));
        }
        if users.is_empty() {
            return Err(Error::InvalidConfig("allocation needs at least one user".into()));
        }
        if let Some(i) = users.iter().position(|u| !(u.phi > 0.0 && u.n_u > 0.0 && u.phi.is_finite() && u.n_u.is_finite())) {
            return Err(Error::InvalidConfig(format!("user {} needs positive, finite phi and n_u", i + 1)));
        }
        if paths == 0 {
            return Err(Error::InvalidConfig("paths must be positive".into()));
        }
        Ok(AllocationProblem {
            total_power,
            users,
            paths,
        })
    }

    /// Average normalised PCRB `sum_u N_u P (P_u + Phi_u)^{-1}`.
    pub fn objective(&self, powers: &[f64]) -> f64 {
        self.users
            .iter()
            .zip(powers)
            .map(|(u, &p)| u.n_u * self.paths as f64 / (p + u.phi))
            .sum()
    }

    /// Derivative of the objective with respect to `P_u`.
    pub fn gradient(&self, user: usize, power: f64) -> f64 {
        let u = self.users[user];
        -(self.paths as f64) * u.n_u / (power + u.phi).powi(2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub powers: Vec<f64>,
    pub lambda: f64,
    pub objective: f64,
    /// 0-based indices of users forced to zero power.
    pub clamped: BTreeSet<usize>,
}

/// Closed-form KKT solution with iterative nonnegativity projection.
pub fn solve_closed_form(problem: &AllocationProblem) -> Result<Allocation> {
    let k = problem.users.len();
    let p = problem.paths as f64;
    let mut active: Vec<usize> = (0..k).collect();
    let mut clamped = BTreeSet::new();
    loop {
        if active.is_empty() {
            return Err(Error::AllocationInvariant("every user was clamped".into()));
        }
        let sum_sqrt: f64 = active.iter().map(|&u| problem.users[u].n_u.sqrt()).sum();
        let sum_phi: f64 = active.iter().map(|&u| problem.users[u].phi).sum();
        let level = (problem.total_power + sum_phi) / sum_sqrt;
        let lambda = p / (level * level);

        let mut powers = vec![0.0; k];
        for &u in &active {
            powers[u] = problem.users[u].n_u.sqrt() * level - problem.users[u].phi;
        }
        let worst = active
            .iter()
            .copied()
            .filter(|&u| powers[u] < 0.0)
            .min_by(|&a, &b| powers[a].total_cmp(&powers[b]));
        match worst {
            Some(u) => {
                clamped.insert(u);
                active.retain(|&x| x != u);
            }
            None => {
                if !(lambda > 0.0 && lambda.is_finite()) {
                    return Err(Error::AllocationInvariant(format!("non-positive multiplier {lambda}")));
                }
                return Ok(Allocation {
                    objective: problem.objective(&powers),
                    powers,
                    lambda,
                    clamped,
                });
            }
        }
    }
}

/// Largest number of users the grid search accepts.
pub const BRUTEFORCE_MAX_USERS: usize = 4;

/// Exhaustive search over the simplex `sum P_u = P_total` on a regular grid
/// with `grid_points` points per axis (step `P_total / (grid_points - 1)`).
pub fn solve_bruteforce(problem: &AllocationProblem, grid_points: usize) -> Result<Allocation> {
    let k = problem.users.len();
    if k > BRUTEFORCE_MAX_USERS {
        return Err(Error::OracleTooLarge {
            dim: k,
            cap: BRUTEFORCE_MAX_USERS,
        });
    }
    if grid_points < 2 {
        return Err(Error::InvalidConfig("grid search needs at least two points per axis".into()));
    }
    let steps = grid_points - 1;
    let step = problem.total_power / steps as f64;
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut counts = vec![0usize; k];
    search(problem, step, steps, 0, &mut counts, &mut best);
    let (objective, counts) = best.expect("the simplex grid is never empty");
    let powers: Vec<f64> = counts.iter().map(|&c| c as f64 * step).collect();
    let clamped = counts.iter().enumerate().filter(|(_, &c)| c == 0).map(|(i, _)| i).collect();
    Ok(Allocation {
        powers,
        lambda: f64::NAN,
        objective,
        clamped,
    })
}

fn search(
    problem: &AllocationProblem,
    step: f64,
    remaining: usize,
    user: usize,
    counts: &mut Vec<usize>,
    best: &mut Option<(f64, Vec<usize>)>,
) {
    let last = counts.len() - 1;
    if user == last {
        counts[user] = remaining;
        let powers: Vec<f64> = counts.iter().map(|&c| c as f64 * step).collect();
        let obj = problem.objective(&powers);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            *best = Some((obj, counts.clone()));
        }
        return;
    }
    for c in 0..=remaining {
        counts[user] = c;
        search(problem, step, remaining - c, user + 1, counts, best);
    }
}

/// `max_{active u} |dL/dP_u| / lambda` where
/// `dL/dP_u = -P N_u (P_u + Phi_u)^{-2} + lambda`.
pub fn kkt_residual(problem: &AllocationProblem, allocation: &Allocation) -> f64 {
    (0..problem.users.len())
        .filter(|u| !allocation.clamped.contains(u))
        .map(|u| (problem.gradient(u, allocation.powers[u]) + allocation.lambda).abs() / allocation.lambda)
        .fold(0.0, f64::max)
}

/// For each clamped user, `dL/dP_u` at zero power. Complementary slackness
/// requires these to be nonnegative: adding power would not lower the
/// Lagrangian, so the unconstrained optimum lies at negative power.
pub fn clamped_gradients(problem: &AllocationProblem, allocation: &Allocation) -> Vec<(usize, f64)> {
    allocation
        .clamped
        .iter()
        .map(|&u| (u, problem.gradient(u, 0.0) + allocation.lambda))
        .collect()
}

/// Writes `user,power_linear,power_db,clamped` (users numbered from 1).
pub fn write_allocation_csv<W: Write>(allocation: &Allocation, mut w: W) -> Result<()> {
    writeln!(w, "user,power_linear,power_db,clamped")?;
    for (i, &p) in allocation.powers.iter().enumerate() {
        let db = if p > 0.0 { format!("{:.6}", crate::linear_to_db(p)) } else { "-inf".to_string() };
        writeln!(w, "{},{:e},{db},{}", i + 1, p, allocation.clamped.contains(&i))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn problem(total: f64, users: &[(f64, f64)], paths: usize) -> AllocationProblem {
        AllocationProblem::new(total, users.iter().map(|&(phi, n_u)| UserTerms { phi, n_u }).collect(), paths).unwrap()
    }

    fn budget_error(p: &AllocationProblem, a: &Allocation) -> f64 {
        (a.powers.iter().sum::<f64>() - p.total_power).abs() / p.total_power
    }

    #[test]
    fn identical_users_split_evenly() {
        let p = problem(100.0, &[(3.0, 2.0), (3.0, 2.0)], 4);
        let a = solve_closed_form(&p).unwrap();
        assert!((a.powers[0] - 50.0).abs() < 1e-12 && (a.powers[1] - 50.0).abs() < 1e-12);
        let b = solve_bruteforce(&p, 401).unwrap();
        assert!((b.powers[0] - 50.0).abs() <= 100.0 / 400.0);
    }

    #[test]
    fn single_user_takes_everything() {
        for (phi, n) in [(1.0, 1.0), (1e4, 0.01), (0.1, 300.0)] {
            let p = problem(7.5, &[(phi, n)], 4);
            let a = solve_closed_form(&p).unwrap();
            assert!((a.powers[0] - 7.5).abs() < 1e-12);
            assert_eq!(solve_bruteforce(&p, 201).unwrap().powers, vec![7.5]);
        }
    }

    #[test]
    fn eq_closed_form_values() {
        let p = problem(10.0, &[(1.0, 4.0), (2.0, 1.0)], 2);
        let a = solve_closed_form(&p).unwrap();
        // level = (10 + 3) / (2 + 1)
        let level = 13.0 / 3.0;
        assert!((a.powers[0] - (2.0 * level - 1.0)).abs() < 1e-12);
        assert!((a.powers[1] - (level - 2.0)).abs() < 1e-12);
        assert!((a.lambda - 2.0 / (level * level)).abs() < 1e-14);
        assert!(kkt_residual(&p, &a) < 1e-10);
    }

    #[test]
    fn uniform_split_is_not_stationary() {
        let p = problem(10.0, &[(1.0, 4.0), (2.0, 1.0)], 2);
        let mut a = solve_closed_form(&p).unwrap();
        a.powers = vec![5.0, 5.0];
        assert!(kkt_residual(&p, &a) > 1e-3);
    }

    #[test]
    fn huge_phi_user_is_clamped() {
        let p = problem(10.0, &[(1.0, 1.0), (1e6, 1.0), (2.0, 3.0)], 4);
        let a = solve_closed_form(&p).unwrap();
        assert_eq!(a.clamped, BTreeSet::from([1]));
        assert_eq!(a.powers[1], 0.0);
        assert!(a.powers.iter().all(|&x| x >= 0.0));
        assert!(budget_error(&p, &a) < 1e-12);
        assert!(kkt_residual(&p, &a) < 1e-10);
        for (_, g) in clamped_gradients(&p, &a) {
            assert!(g >= 0.0);
        }
        let b = solve_bruteforce(&problem(10.0, &[(1.0, 1.0), (1e6, 1.0), (2.0, 3.0)], 4), 401).unwrap();
        assert!(a.objective <= b.objective + 1e-12);
    }

    #[test]
    fn bruteforce_cap() {
        let p = problem(1.0, &[(1.0, 1.0); 5], 1);
        assert!(matches!(solve_bruteforce(&p, 10), Err(Error::OracleTooLarge { .. })));
    }

    #[test]
    fn invalid_problems() {
        assert!(AllocationProblem::new(0.0, vec![UserTerms { phi: 1.0, n_u: 1.0 }], 1).is_err());
        assert!(AllocationProblem::new(1.0, vec![], 1).is_err());
        assert!(AllocationProblem::new(1.0, vec![UserTerms { phi: 0.0, n_u: 1.0 }], 1).is_err());
    }

    #[test]
    fn csv_output() {
        let p = problem(10.0, &[(1.0, 1.0), (1e6, 1.0)], 1);
        let a = solve_closed_form(&p).unwrap();
        let mut out = Vec::new();
        write_allocation_csv(&a, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "user,power_linear,power_db,clamped\n1,1e1,10.000000,false\n2,0e0,-inf,true\n");
    }

    proptest! {
        #[test]
        fn closed_form_is_feasible_and_optimal(
            total in 0.1f64..1e4,
            users in proptest::collection::vec((0.01f64..1e3, 0.01f64..1e3), 1..5),
            paths in 1usize..6,
        ) {
            let p = problem(total, &users, paths);
            let a = solve_closed_form(&p).unwrap();
            prop_assert!(budget_error(&p, &a) < 1e-9);
            prop_assert!(a.lambda > 0.0);
            prop_assert!(a.powers.iter().all(|&x| x >= 0.0));
            prop_assert!(kkt_residual(&p, &a) < 1e-9);
            for (_, g) in clamped_gradients(&p, &a) {
                prop_assert!(g >= -1e-12 * a.lambda);
            }
            // Random feasible points never beat it.
            let weights: Vec<f64> = users.iter().map(|u| u.0.sin().abs() + 0.01).collect();
            let sum: f64 = weights.iter().sum();
            let other: Vec<f64> = weights.iter().map(|w| w / sum * total).collect();
            prop_assert!(a.objective <= p.objective(&other) * (1.0 + 1e-12));
        }

        #[test]
        fn equal_n_users_share_a_water_level(
            total in 1.0f64..1e4,
            phis in proptest::collection::vec(0.01f64..1.0, 2..5),
        ) {
            let users: Vec<(f64, f64)> = phis.iter().map(|&f| (f, 2.0)).collect();
            let p = problem(total, &users, 4);
            let a = solve_closed_form(&p).unwrap();
            prop_assume!(a.clamped.is_empty());
            let levels: Vec<f64> = a.powers.iter().zip(&phis).map(|(x, f)| x + f).collect();
            for l in &levels {
                prop_assert!((l - levels[0]).abs() < 1e-9 * levels[0]);
            }
        }
    }
}

//! Canonical instances shipped with the crate.

use crate::network::NetworkSpec;

const SLOW_FAST_PAIR: &str = include_str!("../fixtures/slow_fast_pair.toml");
const MYOPIC_TRAP: &str = include_str!("../fixtures/myopic_trap.toml");
const INCOMPLETE_WEIGHTS_GAP: &str = include_str!("../fixtures/incomplete_weights_gap.toml");
const OVERLOADED: &str = include_str!("../fixtures/overloaded_single_server.toml");

pub const NAMES: [&str; 4] = ["slow_fast_pair", "myopic_trap", "incomplete_weights_gap", "overloaded_single_server"];

/// Fixture source text by name.
pub fn text(name: &str) -> Option<&'static str> {
    match name {
        "slow_fast_pair" => Some(SLOW_FAST_PAIR),
        "myopic_trap" => Some(MYOPIC_TRAP),
        "incomplete_weights_gap" => Some(INCOMPLETE_WEIGHTS_GAP),
        "overloaded_single_server" => Some(OVERLOADED),
        _ => None,
    }
}

pub fn by_name(name: &str) -> Option<NetworkSpec> {
    text(name).map(|t| NetworkSpec::from_toml(t).expect("shipped fixture is valid"))
}

/// 2×2 complete, λ = (0.4, 0.4), μ = (0.41, 0.99).
pub fn slow_fast_pair() -> NetworkSpec {
    by_name("slow_fast_pair").unwrap()
}

/// Two sources, three middle servers, three terminals.
pub fn myopic_trap() -> NetworkSpec {
    by_name("myopic_trap").unwrap()
}

/// Incomplete 2×2, λ = (1/4, 1/8), μ = (1/2 + ε, 1/4 + ε), ε = 0.01.
pub fn incomplete_weights_gap() -> NetworkSpec {
    by_name("incomplete_weights_gap").unwrap()
}

/// Two queues λ = 0.4 against one server μ = 0.5.
pub fn overloaded_single_server() -> NetworkSpec {
    by_name("overloaded_single_server").unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stability::{best_matching, check_dag_flow};

    #[test]
    fn all_fixtures_parse() {
        for n in NAMES {
            assert!(by_name(n).is_some(), "{n}");
        }
        assert!(by_name("nope").is_none());
    }

    #[test]
    fn myopic_trap_is_centrally_stable() {
        assert!(check_dag_flow(&myopic_trap()).unwrap().is_feasible());
    }

    #[test]
    fn incomplete_weights_gap_reproduces_both_printed_values() {
        let eps = 0.01;
        let net = incomplete_weights_gap();
        // α = (1,1): ½ α·Mμ = 3/8 + ε, α·λ = 3/8
        let w = best_matching(&net, &[1.0, 1.0]);
        assert!((0.5 * w.value - (0.375 + eps)).abs() < 1e-12);
        assert!((w.threshold - 0.375).abs() < 1e-12);
        // α = (1, ½): α·Mμ = ½(1 + 3ε), α·λ = 5/16, attained by the anti-diagonal
        let w = best_matching(&net, &[1.0, 0.5]);
        assert!((w.value - 0.5 * (1.0 + 3.0 * eps)).abs() < 1e-12);
        assert!((w.threshold - 5.0 / 16.0).abs() < 1e-12);
        let [q1, q2, s1, s2] = ["q1", "q2", "s1", "s2"].map(|s| net.lookup(s).unwrap());
        assert_eq!(w.edges, vec![(q1, s2), (q2, s1)]);
    }
}

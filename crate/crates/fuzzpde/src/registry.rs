//! Built-in worked problems. Each entry ships as a problem file with an
//! oracle section (closed-form crisp solution, expected classification) so
//! tests and the CLI's reproduce mode have fixed reference targets.

use thiserror::Error;

use crate::problem::{load_problem_file, ProblemError, ProblemFile};

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("unknown registry id {got}; known ids are 1 through 5")]
    UnknownId { got: u8 },
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

const EX1: &str = include_str!("../data/ex1.toml");
const EX2: &str = include_str!("../data/ex2.toml");
const EX3: &str = include_str!("../data/ex3.toml");
const EX4: &str = include_str!("../data/ex4.toml");
const EX5: &str = include_str!("../data/ex5.toml");

pub fn ids() -> [u8; 5] {
    [1, 2, 3, 4, 5]
}

/// Raw TOML text of a registry entry, byte-identical to the shipped file.
pub fn source(id: u8) -> Result<&'static str, RegistryError> {
    match id {
        1 => Ok(EX1),
        2 => Ok(EX2),
        3 => Ok(EX3),
        4 => Ok(EX4),
        5 => Ok(EX5),
        got => Err(RegistryError::UnknownId { got }),
    }
}

pub fn load(id: u8) -> Result<ProblemFile, RegistryError> {
    Ok(load_problem_file(source(id)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_entry_loads_with_an_oracle() {
        for id in ids() {
            let file = load(id).unwrap();
            let oracle = file.oracle.as_ref().unwrap_or_else(|| {
                panic!("registry entry {id} is missing its oracle section")
            });
            assert!(oracle.g.is_some(), "entry {id} has no closed form");
            let verdict = oracle.verdict.as_deref().unwrap();
            assert!(
                verdict == "bfs" || verdict == "ss_only",
                "entry {id}: unexpected verdict {verdict}"
            );
        }
    }

    #[test]
    fn entry_three_is_two_dimensional() {
        let file = load(3).unwrap();
        assert_eq!(file.problem.dimension, 2);
        assert!(file.problem.q.is_some());
        assert_eq!(file.problem.parameters.len(), 5);
    }

    #[test]
    fn entry_five_overrides_iteration_control() {
        let file = load(5).unwrap();
        let vim = file.vim.unwrap();
        assert_eq!(vim.tolerance, Some(1e-6));
        assert_eq!(vim.max_iterations, Some(60));
    }

    #[test]
    fn unknown_ids_are_rejected() {
        assert!(matches!(load(6), Err(RegistryError::UnknownId { got: 6 })));
        assert!(matches!(load(0), Err(RegistryError::UnknownId { got: 0 })));
    }
}

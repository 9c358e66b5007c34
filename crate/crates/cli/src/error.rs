use thiserror::Error;

/// Failure of a command, split by the exit code it maps to.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, configuration or input files. Exit code 2.
    #[error("configuration error: {0}")]
    Config(String),

    /// A computation that could not produce a result. Exit code 3.
    #[error("numerical failure ({kind}): {0}", kind = kind(.0))]
    Numerical(serfloop::Error),

    /// Writing results failed. Exit code 1.
    #[error("cannot write {path}: {source}")]
    Output {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn kind(e: &serfloop::Error) -> String {
    let debug = format!("{e:?}");
    debug.split(|c: char| !c.is_alphanumeric()).next().unwrap_or_default().to_string()
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Output { .. } => 1,
        }
    }

    /// Attaches the name of the input that produced a library error.
    pub fn in_input(what: &str, e: serfloop::Error) -> Self {
        match CliError::from(e) {
            CliError::Config(msg) => CliError::Config(format!("{what}: {msg}")),
            other => other,
        }
    }
}

impl From<serfloop::Error> for CliError {
    fn from(e: serfloop::Error) -> Self {
        use serfloop::Error as E;
        match e {
            E::PoleAtEvaluationPoint { .. }
            | E::DegenerateLoop
            | E::NoCrossing
            | E::UnstableDiscretization { .. }
            | E::NumericalDivergence(..)
            | E::NoPhaseCrossover
            | E::NoConvergence(_) => CliError::Numerical(e),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::from(serfloop::Error::NoPhaseCrossover).exit_code(), 3);
        assert_eq!(CliError::from(serfloop::Error::Parse { line: 4, msg: "x".into() }).exit_code(), 2);
        let e = CliError::in_input("open.csv", serfloop::Error::Parse { line: 4, msg: "x".into() });
        assert!(e.to_string().contains("open.csv") && e.to_string().contains("line 4"), "{e}");
    }
}

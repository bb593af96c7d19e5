mod dataset;
mod inspect;
mod stages;
mod training;

use reddot_core::store::{Dataset, Split};
use reddot_core::{Error, Parallelism, Result};

use crate::args::{Command, SplitArg};

const PAR: Parallelism = Parallelism::Parallel;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => dataset::ingest(a),
        Command::Validate(a) => dataset::validate(a),
        Command::Synth(a) => dataset::synth(a),
        Command::Rank(a) => stages::rank(a),
        Command::Mine(a) => stages::mine(a),
        Command::Bundle(a) => stages::bundle(a),
        Command::Train(a) => training::train(a),
        Command::Eval(a) => training::eval(a),
        Command::Gradcheck(a) => inspect::gradcheck(a),
        Command::Report(a) => inspect::report(a),
    }
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
            SplitArg::External => Split::External,
        }
    }
}

/// Loads a dataset and refuses it if validation finds any problem.
fn load_usable(path: &std::path::Path) -> Result<Dataset> {
    let dataset = Dataset::load(path)?;
    let report = dataset.validate();
    if !report.is_usable() {
        for f in &report.findings {
            eprintln!("  {}", f);
        }
        return Err(Error::Data(format!(
            "dataset {} is not usable ({} findings)",
            path.display(),
            report.findings.len()
        )));
    }
    Ok(dataset)
}

use anyhow::Context;
use lumendet::data::{generate_dataset, synth_generate, Domain, Split, SynthSpec, TABLE1_FRACTIONS};

use super::require;
use crate::{CliError, GenerateArgs};

pub fn run(a: &GenerateArgs) -> Result<(), CliError> {
    let mut spec = match &a.spec {
        Some(path) => {
            require(path, "spec file")?;
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            SynthSpec::from_text(&text)?
        }
        None => SynthSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    if a.flat {
        let manifest = synth_generate(&spec, a.count, &a.out, Domain::Synthetic)?;
        let path = a.out.join("all.tsv");
        manifest.save(&path)?;
        println!("{}", path.display());
        return Ok(());
    }
    let splits = generate_dataset(&spec, a.count, TABLE1_FRACTIONS, &a.out)?;
    println!("{}", a.out.join("all.tsv").display());
    for split in Split::ALL {
        println!("{}\t{} images", a.out.join(format!("{split}.tsv")).display(), splits.get(split).len());
    }
    Ok(())
}

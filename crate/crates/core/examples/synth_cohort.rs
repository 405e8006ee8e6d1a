//! Generate a seeded synthetic cohort, write it in the long CSV layout,
//! read it back, and split it by person with train-only normalization.

use lassornet::data::{prepare_split, read_cohort, synth_cohort, write_cohort, NormalizationScope, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SynthSpec {
        n_people: 12,
        n_genes: 30,
        n_rhythmic: 8,
        ..SynthSpec::default()
    };
    let cohort = synth_cohort(&spec, 42)?;
    let mut csv = Vec::new();
    write_cohort(&mut csv, &cohort, &["example cohort, seed 42".to_string()])?;
    let text = String::from_utf8(csv)?;
    println!("{} CSV rows; first lines:", text.lines().count());
    for line in text.lines().take(4) {
        println!("  {line}");
    }

    let back = read_cohort(text.as_bytes())?;
    assert_eq!(back, cohort);
    let p = &back.people[0];
    println!(
        "person {} has {} samples, DLMO {:.2} h, first ZT {:.1} h",
        p.person_id,
        p.len(),
        p.dlmo.unwrap().hours(),
        p.samples[0].zt.hours()
    );

    let split = prepare_split(&back, 7, NormalizationScope::Train)?;
    println!(
        "split: {} train / {} validation / {} test people, {} genes kept",
        split.train.people.len(),
        split.validation.people.len(),
        split.test.people.len(),
        split.train.gene_ids.len()
    );
    Ok(())
}

// Read a small parallel NER corpus with two automatic label sets, score each
// against the gold tags and estimate its whole-corpus noise matrix.

use noise_oracle::data::{class_prior, empirical_noise_matrix, quality_report, ParallelCorpus, TsvSchema, NER_TAGS};

const CORPUS: &str = "\
Angela\tPER\tPER\tPER
Merkel\tPER\tPER\tO
visits\tO\tO\tO
Paris\tLOC\tLOC\tORG

Siemens\tORG\tO\tORG
opens\tO\tO\tO
in\tO\tO\tO
Berlin\tLOC\tLOC\tLOC
";

pub fn run_example() -> noise_oracle::Result<()> {
    let schema = TsvSchema::with_label_sets(["lexicon", "rules"]).inventory(NER_TAGS);
    let corpus = ParallelCorpus::parse_tsv(CORPUS, &schema, "inline")?;
    println!("{} tokens, tags {:?}", corpus.len(), corpus.label_names());
    println!("clean prior {:.3?}", class_prior(&corpus)?.probs());

    let o = corpus.label_index("O")?;
    for name in corpus.label_set_names() {
        let set = corpus.label_set_index(name)?;
        let q = quality_report(&corpus, set, o)?;
        println!(
            "{name}: P {:.2} R {:.2} F1 {:.2} (token accuracy {:.2})",
            q.precision, q.recall, q.f1, q.accuracy
        );
        let m = empirical_noise_matrix(&corpus, set)?;
        println!("  noise row of ORG: {:.2?}", m.row(3));
    }
    Ok(())
}

fn main() -> noise_oracle::Result<()> {
    run_example()
}

//! The four text representations of one transcript: count-vector indices,
//! padded word embeddings, summed word embeddings and a sentence embedding.
//!
//!     cargo run --example text_features

use std::path::Path;

use scenefuse::clients::{StubSentenceEncoder, WordEmbeddingTable};
use scenefuse::ingest::Transcript;
use scenefuse::textfeat::{
    build_count_vocab, embed_w2v_pad, embed_w2v_sum, encode_sentbert, tokenize_transcript, vectorize_count, Stopwords,
    VOCAB_CAP,
};

fn transcript(id: &str, text: &str) -> Transcript {
    Transcript {
        video_id: id.into(),
        raw_text: text.into(),
        language: "en".into(),
    }
}

fn main() -> scenefuse::Result<()> {
    let stop = Stopwords::english();
    let docs: Vec<_> = [
        transcript("a", "The barista pours a latte; we LOVE this cafe!"),
        transcript("b", "Two espresso shots and a croissant, please."),
        transcript("c", "Sharks and jellyfish in the big tank."),
    ]
    .iter()
    .map(|t| (t.clone(), tokenize_transcript(t, &stop)))
    .collect();
    for (t, d) in &docs {
        println!("{:>2}: {:?}", t.video_id, d.tokens);
    }

    let training: Vec<_> = docs.iter().map(|(_, d)| d.clone()).collect();
    let vocab = build_count_vocab(&training, VOCAB_CAP)?;
    let count = vectorize_count(&docs[0].1, &vocab);
    println!("count_vect (first 8 of {}): {:?}", count.data.len(), &count.data[..8]);

    let table_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/embeddings_fixture.txt");
    let table = WordEmbeddingTable::load(&table_path)?;
    let pad = embed_w2v_pad(&docs[0].1, &table)?;
    let sum = embed_w2v_sum(&docs[0].1, &table)?;
    println!("w2v_pad shape {:?}, w2v_sum norm {:.3}", pad.shape(), norm(&sum.data));

    let bert = encode_sentbert(&docs[2].0, &StubSentenceEncoder::new(0))?;
    println!("sent_bert: {} dims, norm {:.3}", bert.data.len(), norm(&bert.data));
    Ok(())
}

fn norm(v: &[f32]) -> f32 {
    v.iter().map(|x| x * x).sum::<f32>().sqrt()
}

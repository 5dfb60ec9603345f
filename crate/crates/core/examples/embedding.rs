//! Prompt construction, the offline mock provider and the token cache.

use mmfusion::data::{shot_bank, synth_subject, SyntheticConfig};
use mmfusion::embedding::{
    build_prompt, parse_token, Embedder, MockProvider, PromptSpec, RetryPolicy, Shots, TokenCache, EXAMPLE_HEADING,
};

fn main() -> mmfusion::Result<()> {
    let cfg = SyntheticConfig::default();
    let bank = shot_bank(&cfg);
    let record = synth_subject(&cfg, 120).record;
    let summary = [0.12, -0.4, 0.033];

    for shots in [Shots::ZERO, Shots::ONE, Shots::FIVE] {
        let prompt = build_prompt(&record, Some(&summary), &PromptSpec::with_shots(shots), &bank)?;
        println!(
            "{} shot(s): {} chars, {} example blocks",
            shots.count(),
            prompt.len(),
            prompt.matches(EXAMPLE_HEADING).count()
        );
    }
    let zero = build_prompt(&record, None, &PromptSpec::with_shots(Shots::ZERO), &bank)?;
    println!("\n{zero}");

    let cache = TokenCache::in_memory();
    let embedder =
        Embedder::new(&MockProvider, &cache, PromptSpec::default(), bank).with_retry(RetryPolicy::no_delay(3));
    let first = embedder.embed(&record, Some(&summary))?;
    let again = embedder.embed(&record, Some(&summary))?;
    assert_eq!(first, again);
    println!(
        "token norm {:.4}, provider calls {}, cache hits {}",
        first.l2_norm(),
        embedder.provider_calls(),
        embedder.cache_hits()
    );

    for reply in ["[1, 2, 3]", "not a list"] {
        match parse_token(reply) {
            Ok(t) => println!("{reply:?} parsed to {} values", t.values().len()),
            Err(e) => println!("{reply:?} rejected: {e}"),
        }
    }
    Ok(())
}

//! Measures how dual refinement changes frame/suppress similarity on random
//! three-frame stories encoded by the toy encoder.

use orthoprompt::prompt::gather_tokens;
use orthoprompt::{
    encoder, fixtures, pooled_cosine, refine, slice, ConceptBases, EncoderConfig, Pooling,
    RefinementConfig, ToyEncoder,
};

fn main() -> orthoprompt::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(orthoprompt::DEFAULT_SEED);
    let enc = ToyEncoder::new(EncoderConfig {
        seed,
        ..EncoderConfig::default()
    })?;
    let (mut reduced, mut kept) = (0, 0);
    let n = 50;
    let mut worst_ratio: f64 = 1.0;
    let mut best_ratio: f64 = 1.0;
    for i in 0..n {
        let story = fixtures::synthetic_story(i, 3, enc.vocab_size())?;
        let j = 2 + (i as usize % 2);
        let p = story.layout.partition(j)?;
        let x = encoder::encode(&enc, &story.tokens)?;
        let x_exp = encoder::encode(&enc, &gather_tokens(&story.tokens, &p.express_spans)?)?;
        let x_sup = encoder::encode(&enc, &gather_tokens(&story.tokens, &p.suppress_spans)?)?;
        let bases = ConceptBases::from_concepts(&x_exp, Some(&x_sup), 1e-10)?;
        let d = refine(
            &x,
            &bases.express,
            &bases.suppress,
            &RefinementConfig::default(),
            Some(&p),
        )?;
        let span = [p.frame_span()];
        let before = slice(&x, &span)?;
        let after = slice(&d.x_refined, &span)?;
        let sup_b = pooled_cosine(&before, &x_sup, Pooling::Mean)?;
        let sup_a = pooled_cosine(&after, &x_sup, Pooling::Mean)?;
        let exp_b = pooled_cosine(&before, &x_exp, Pooling::Mean)?;
        let exp_a = pooled_cosine(&after, &x_exp, Pooling::Mean)?;
        let ratio = exp_a / exp_b;
        worst_ratio = worst_ratio.min(ratio);
        best_ratio = best_ratio.max(ratio);
        if sup_a < sup_b {
            reduced += 1;
        }
        if ratio >= 0.95 {
            kept += 1;
        }
        println!("{i:2} j={j} sup {sup_b:.4} -> {sup_a:.4}   exp {exp_b:.4} -> {exp_a:.4}  ratio {ratio:.4} ranks {} {}", bases.express.rank(), bases.suppress.rank());
    }
    println!("reduced {reduced}/{n}, express within 5%: {kept}/{n}, ratio range [{worst_ratio:.4}, {best_ratio:.4}]");
    Ok(())
}

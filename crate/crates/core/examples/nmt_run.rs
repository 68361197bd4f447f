//! Tuning harness for desk-scale translator runs.
//!
//! `nmt_run overfit <pairs> <epochs> <lr> <batch>`
//! `nmt_run ablate <epochs> <lr> <batch> <size>...`

use std::time::Instant;

use doctrans_core::lang::Language;
use doctrans_core::nmtdata::synthetic::{ToyGrammar, ToyGrammarConfig};
use doctrans_core::nmtdata::{build_vocabularies, VocabOptions};
use doctrans_core::transformer::{
    encode_corpus, greedy_decode, run_data_ablation, train_translator, AblationOptions, NmtTrainConfig,
    TransformerConfig,
};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let grammar = ToyGrammar::new(ToyGrammarConfig::default());
    let start = Instant::now();
    match args[0].as_str() {
        "overfit" => {
            let n: usize = args[1].parse().unwrap();
            let cfg = NmtTrainConfig {
                epochs: args[2].parse().unwrap(),
                learning_rate: args[3].parse().unwrap(),
                batch_size: args[4].parse().unwrap(),
                ..Default::default()
            };
            let pairs = grammar.corpus(&[(Language::En, Language::Fr)], n, 11);
            let (sv, tv) = build_vocabularies(&pairs, VocabOptions { min_freq: 1, ..Default::default() });
            let enc = encode_corpus(&pairs, &sv, &tv).unwrap();
            let model_cfg = TransformerConfig { dropout: 0.0, ..TransformerConfig::tiny() };
            let t = train_translator(&enc, &enc, &cfg, model_cfg, sv.len(), tv.len(), &mut |s| {
                if s.epoch % 10 == 0 {
                    println!("epoch {} train {:.4} val {:.4} ({:.1}s)", s.epoch, s.train_loss, s.val_loss, start.elapsed().as_secs_f64());
                }
            })
            .unwrap();
            let exact = enc
                .iter()
                .filter(|p| {
                    greedy_decode(&t.model, &p.src_ids, p.dec_target_ids[0], p.dec_target_ids.len() + 5).unwrap()
                        == p.dec_target_ids
                })
                .count();
            println!("vocab {} {} exact {exact}/{} total {:.1}s", sv.len(), tv.len(), enc.len(), start.elapsed().as_secs_f64());
        }
        "ablate" => {
            let opts = AblationOptions {
                model: TransformerConfig::tiny(),
                train: NmtTrainConfig {
                    epochs: args[1].parse().unwrap(),
                    learning_rate: args[2].parse().unwrap(),
                    batch_size: args[3].parse().unwrap(),
                    ..Default::default()
                },
                vocab: VocabOptions { min_freq: 1, ..Default::default() },
            };
            let sizes: Vec<usize> = args[4..].iter().map(|s| s.parse().unwrap()).collect();
            let dirs = [(Language::En, Language::Fr), (Language::En, Language::De)];
            let corpus = grammar.corpus(&dirs, *sizes.last().unwrap(), 21);
            let heldout = grammar.corpus(&dirs, 100, 22);
            let rows = run_data_ablation(&corpus, &heldout, &sizes, &opts, &mut |size, s| {
                println!("size {size} epoch {} train {:.4} val {:.4} ({:.1}s)", s.epoch, s.train_loss, s.val_loss, start.elapsed().as_secs_f64());
            })
            .unwrap();
            println!("{rows:?}");
        }
        other => panic!("unknown mode {other}"),
    }
}

//! Generate seeded arithmetic tasks and exercise the binary verifier.
//!
//! ```bash
//! cargo run --release --example generate_tasks
//! ```

use curelab::env::{generate_task, reward, verify, RewardConfig, Vocab};
use curelab::rng::SeedPath;

fn main() -> curelab::Result<()> {
    let vocab = Vocab::new(8)?;
    println!("vocabulary ({} tokens):", vocab.size());
    print!("{}", vocab.mapping_table());

    println!("\ntasks are left-to-right chains, every step reduced mod 10:");
    for difficulty in 1..=4 {
        let task = generate_task(
            &vocab,
            SeedPath::root(7).child(difficulty as u64),
            difficulty,
        );
        println!(
            "  L={difficulty}: {}  ->  answer {}",
            vocab.render(&task.prompt),
            task.answer
        );
    }

    let task = generate_task(&vocab, SeedPath::root(7).child(100), 3);
    println!(
        "\nverifier reads the last digit before EOS (task: {} answer {}):",
        vocab.render(&task.prompt),
        task.answer
    );
    let wrong = (task.answer + 1) % 10;
    let responses = vec![
        vec![vocab.digit(task.answer), Vocab::EOS],
        vec![
            vocab.filler(0),
            vocab.digit(wrong),
            vocab.digit(task.answer),
            Vocab::EOS,
        ],
        vec![vocab.digit(task.answer), vocab.digit(wrong), Vocab::EOS],
        vec![vocab.filler(1), Vocab::EOS],
    ];
    for resp in responses {
        let ok = verify(&vocab, task.answer, &resp);
        println!("  {:<10} verified={ok}", vocab.render(&resp));
    }

    let shaped = RewardConfig {
        max_response_len: 64,
        overlong_buffer_len: 16,
        overlong_penalty_factor: 1.0,
        overlong_enabled: true,
    };
    println!("\noverlong shaping (cap 64, buffer 16, factor 1.0):");
    for (len, truncated) in [(40, false), (56, false), (64, true)] {
        println!(
            "  verified, {len} tokens, truncated={truncated}: reward {:+.2}",
            reward(true, len, truncated, &shaped)
        );
    }
    Ok(())
}

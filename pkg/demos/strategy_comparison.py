"""Compare decoding strategies on one dataset and print a metric table.

Smaller than the full benchmark (300 games, 3 seeds) so it finishes in
about a minute; bump N_GAMES and SEEDS for tighter numbers.
"""

from guesslab.decoding import DecodingConfig
from guesslab.grammar_lm import default_grammar
from guesslab.harness import run_seeded
from guesslab.metrics import build_reference_table
from guesslab.world import generate_dataset

N_GAMES = 300
SEEDS = (1, 2, 3)

CONFIGS = [
    DecodingConfig("greedy"),
    DecodingConfig("beam", beam_size=3),
    DecodingConfig("confirm_it"),
    DecodingConfig("top_k", k=5),
    DecodingConfig("nucleus", p=0.3),
    DecodingConfig("typical", tau=0.7),
    DecodingConfig("pure_sampling"),
]


def main():
    lm = default_grammar()
    dataset = generate_dataset(seed=11, n_games=N_GAMES)
    freq = build_reference_table(n_questions=20_000, n_scenes=200)

    header = (f"{'strategy':<20s} {'acc':>6s} {'chair_i':>8s} {'chair_s':>8s} "
              f"{'rep':>6s} {'vocab':>6s} {'rare':>5s}")
    print(header)
    print("-" * len(header))
    for config in CONFIGS:
        r = run_seeded(dataset, lm, config, SEEDS, turns=5, freq_table=freq)
        print(f"{r.label:<20s} {r.accuracy:6.2f} {r.chair_i:8.2f} "
              f"{r.chair_s:8.2f} {r.repetition_rate:6.2f} "
              f"{r.vocabulary_size:6.1f} {r.rare_words:5.1f}")
    print(f"\n({N_GAMES} games x {len(SEEDS)} seeds, 5 turns each)")


if __name__ == "__main__":
    main()

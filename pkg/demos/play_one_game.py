"""Play a single game under two decoding strategies and print the dialogues.

Shows the raw moving parts: the scene, the grammar automaton, the oracle
answers, and how the guesser's posterior sharpens turn by turn.
"""

from guesslab.agents import play_game
from guesslab.decoding import DecodingConfig
from guesslab.grammar_lm import default_grammar
from guesslab.world import generate_dataset


def show(transcript, game):
    label = transcript.config.label()
    print(f"\n=== {label} on {game.game_id} ===")
    for t, turn in enumerate(transcript.turns, 1):
        words = " ".join(w for w in turn.question if w != "<eoq>")
        top = max(turn.posterior, key=turn.posterior.get)
        print(f"  turn {t}: {words:<40s} -> {turn.answer:<3s} "
              f"(best guess obj {top}, p={turn.posterior[top]:.2f})")
    verdict = "correct" if transcript.success else "wrong"
    print(f"  final guess: object {transcript.final_guess} "
          f"({verdict}, target was {transcript.target_id})")


def main():
    dataset = generate_dataset(seed=7, n_games=5)
    game = dataset.games[0]
    lm = default_grammar()

    print(f"Scene for {game.game_id} (grid {game.scene.grid[0]}x{game.scene.grid[1]}):")
    for obj in game.scene.objects:
        marker = " <- target" if obj.id == game.target_id else ""
        print(f"  obj {obj.id}: {obj.size} {obj.color} {obj.category} "
              f"at row {obj.row}, col {obj.col}{marker}")

    for config in (DecodingConfig("greedy"),
                   DecodingConfig("pure_sampling", rng_seed=1)):
        show(play_game(game, lm, config, turns=5), game)


if __name__ == "__main__":
    main()

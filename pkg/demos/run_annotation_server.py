"""Spin up the human-evaluation annotation server on synthetic transcripts.

Plays four decoding conditions over a small dataset, builds blinded
annotator sessions, and serves the web UI. Try it with:

    python3 demos/run_annotation_server.py
    # then open http://127.0.0.1:8000/ and enter annotator-1
"""

import tempfile

import uvicorn

from guesslab.annotation_service import AnnotationService, build_app
from guesslab.decoding import DecodingConfig
from guesslab.grammar_lm import default_grammar
from guesslab.harness import play_dataset
from guesslab.world import generate_dataset

CONDITIONS = [
    DecodingConfig("confirm_it"),
    DecodingConfig("nucleus", p=0.3),
    DecodingConfig("typical", tau=0.7),
    DecodingConfig("pure_sampling"),
]


def main():
    lm = default_grammar()
    dataset = generate_dataset(seed=31, n_games=60)
    transcripts = []
    for config in CONDITIONS:
        transcripts.extend(play_dataset(dataset, lm, config, turns=5))

    store = tempfile.NamedTemporaryFile(
        suffix=".jsonl", prefix="annotations-", delete=False)
    print(f"annotation store: {store.name}")
    service = AnnotationService.from_transcripts(
        transcripts, dataset, n_annotators=4, quota=10, seed=0,
        store_path=store.name)
    print(service.describe())
    print(f"annotators: {', '.join(service.annotator_ids)}")

    uvicorn.run(build_app(service), host="127.0.0.1", port=8000)


if __name__ == "__main__":
    main()

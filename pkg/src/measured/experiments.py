"""Prepackaged experiment protocols built from the library pieces.

The few-shot grid trains the dimension classifier and the pure number
model on class-balanced subsets of k examples per dimension, once with the
encoder projection frozen at its random initialization and once trainable,
across several seeds, and reports test macro-F1 and log-mae next to the
majority/median baselines.
"""

from __future__ import annotations

from dataclasses import replace
from statistics import mean, stdev

import numpy as np

from measured import evaluation
from measured.data import DatasetSplit, fewshot_sample
from measured.encoding import EncoderConfig, HashedNgramEncoder
from measured.model import MeasurementModel, ModelSpec
from measured.training import TrainConfig, train
from measured.units import UnitRegistry


def _summary(values: list[float]) -> dict:
    return {
        "mean": mean(values),
        "sd": stdev(values) if len(values) > 1 else 0.0,
        "values": values,
    }


def train_variant(
    variant: str,
    split: DatasetSplit,
    registry: UnitRegistry,
    encoder_config: EncoderConfig,
    train_config: TrainConfig,
    seed: int,
    mixture_number_prediction: bool = False,
) -> MeasurementModel:
    """Build and train one model; ``seed`` drives init and shuffling."""
    encoder = HashedNgramEncoder(encoder_config, seed=seed)
    spec = ModelSpec(
        variant,
        encoder_config.hidden_dim,
        mixture_number_prediction=mixture_number_prediction,
    )
    model = MeasurementModel(spec, registry, encoder, seed=seed)
    train(model, split, replace(train_config, seed=seed))
    return model


def fewshot_grid(
    split: DatasetSplit,
    registry: UnitRegistry,
    encoder_config: EncoderConfig,
    train_config: TrainConfig,
    ks: tuple[int, ...] = (10, 40, 70, 100),
    seeds: tuple[int, ...] = (0, 1, 2),
) -> dict:
    """Frozen-vs-finetuned few-shot comparison over k examples per class.

    For each k and seed, a balanced sample of the train split feeds two
    regimes of the dimension classifier (scored by test macro-F1) and of
    the number model (scored by test log-mae).  Returns a report keyed by
    regime and k with per-seed values and mean/sd.
    """
    test = list(split.test)
    gold_dims = [ex.dimension.name for ex in test]
    gold_numbers = np.array([ex.canonical_number for ex in test])
    dim_order = [d.name for d in registry.dimensions]

    report: dict = {
        "ks": list(ks),
        "seeds": list(seeds),
        "dimension_macro_f1": {"finetuned": {}, "frozen": {}},
        "number_log_mae": {"finetuned": {}, "frozen": {}},
    }

    maj = evaluation.majority_baseline(
        [ex.dimension.name for ex in split.train], dim_order
    )
    med = evaluation.median_baseline(
        [ex.canonical_number for ex in split.train]
    )
    observed = [c for c in dim_order if c in set(gold_dims) | {maj}]
    report["dimension_macro_f1"]["majority"] = {
        "macro_f1": evaluation.macro_f1(gold_dims, [maj] * len(test), observed),
        "accuracy": evaluation.accuracy(gold_dims, [maj] * len(test)),
    }
    report["number_log_mae"]["median"] = evaluation.log_mae(
        gold_numbers, np.full(len(test), med)
    )

    for k in ks:
        scores: dict[str, dict[str, list[float]]] = {
            "dim": {"finetuned": [], "frozen": []},
            "number": {"finetuned": [], "frozen": []},
        }
        for seed in seeds:
            shot = fewshot_sample(split, k, seed=seed)
            shot_split = DatasetSplit(shot, split.val, test, split.seed)
            for frozen in (False, True):
                config = replace(encoder_config, frozen=frozen)
                regime = "frozen" if frozen else "finetuned"

                model = train_variant(
                    "dim", shot_split, registry, config, train_config, seed
                )
                H = model.encoder.encode_matrix(
                    model.encoder.feature_matrix([ex.masked_text for ex in test])
                )
                pred = [
                    registry.dimensions[int(i)].name
                    for i in model.argmax_dimension_indices(H)
                ]
                classes = [c for c in dim_order if c in set(gold_dims) | set(pred)]
                scores["dim"][regime].append(
                    evaluation.macro_f1(gold_dims, pred, classes)
                )

                model = train_variant(
                    "number", shot_split, registry, config, train_config, seed
                )
                H = model.encoder.encode_matrix(
                    model.encoder.feature_matrix([ex.masked_text for ex in test])
                )
                scores["number"][regime].append(
                    evaluation.log_mae(gold_numbers, model.predict_number_batch(H))
                )
        for regime in ("finetuned", "frozen"):
            report["dimension_macro_f1"][regime][str(k)] = _summary(
                scores["dim"][regime]
            )
            report["number_log_mae"][regime][str(k)] = _summary(
                scores["number"][regime]
            )
    return report

"""Acceptance suite: one test per release criterion, each printing a
pass/fail line. Run with ``pytest tests/test_acceptance.py -v -s``.

The slowest test (the 5-seed experiment) takes a few minutes of CPU;
everything else finishes in seconds.
"""

import contextlib
import json
import math
from dataclasses import replace

import numpy as np
import pytest

from quadgen import autodiff as ad
from quadgen.autodiff import Tensor
from quadgen.codec import AspectQuad, TemplateKind, parse, render
from quadgen.corpus import BOS_ID, EOS_ID, CorpusSplit, SyntheticSpec, build_vocabulary, generate_synthetic
from quadgen.evaluation import evaluate_model, low_resource_run, nested_subset_indices
from quadgen.model import ModelConfig, init_params, load_checkpoint
from quadgen.objectives import MulConfig, mul_loss
from quadgen.training import (TrainConfig, baseline_of, batch_loss, inspect_negatives,
                              run_ablation_suite, train)
from quadgen.uncertainty import SampleSets, UncertaintyConfig, acquire_samples, mc_distributions


@contextlib.contextmanager
def criterion(number: int, description: str):
    try:
        yield
    except BaseException:
        print(f"[criterion {number:02d}] FAIL - {description}")
        raise
    print(f"[criterion {number:02d}] PASS - {description}")


# -- 1 -----------------------------------------------------------------


def test_criterion_1_pairwise_loss_oracle():
    with criterion(1, "pairwise margin loss matches the hand-evaluated value"):
        sets = SampleSets((0.8, 0.2, 0.2), ((0.7, 7), (0.6, 9)))
        got = mul_loss([sets], MulConfig(alpha=1.0, margin=0.0)).item()
        # independent scalar evaluation of the published formula
        inner = 0.0
        for p in (0.8, 0.2, 0.2):
            for n in (0.7, 0.6):
                inner += math.exp(1.0 * (n - p + 0.0))
        expected = math.log(1.0 + inner)
        assert abs(expected - 2.1977) < 5e-4  # sanity vs the quoted ~2.1977
        assert abs(got - expected) < 1e-6


# -- 2 -----------------------------------------------------------------


def _gradcheck_setup():
    cfg = TrainConfig(d_model=16, n_layers=2, n_heads=2, d_ff=32, mc_samples=3,
                      dropout=0.3, alpha=4.0, margin=-0.2, use_ul=True, seed=0)
    split = generate_synthetic(SyntheticSpec(train=2, dev=0, test=0, seed=4))
    vocab = build_vocabulary(split.train)
    from quadgen.training import encode_example
    batch = [encode_example(e, vocab, cfg.template_kind()) for e in split.train]
    params = init_params(cfg.model_config(len(vocab)), np.random.default_rng(1))
    first = batch[0]
    masks_shape = (cfg.mc_samples, len(batch), max(len(b[2]) for b in batch), cfg.d_model)
    masks = (np.random.default_rng(2).random(masks_shape) >= cfg.dropout).astype(float)
    return cfg, params, batch, masks


def _loss_terms(params, cfg, batch, masks):
    bundle = batch_loss(params, cfg, batch, dropout_rng=None, masks=masks)
    return {"l_mle": bundle.mle, "l_mul": bundle.mul, "l_me": bundle.me, "l_ul": bundle.ul}


def test_criterion_2_gradient_suite():
    with criterion(2, "all four losses pass central finite differences through the model"):
        cfg, params, batch, masks = _gradcheck_setup()
        rng = np.random.default_rng(7)
        step = 1e-4
        names = sorted(params.tensors)
        for term in ("l_mle", "l_mul", "l_me", "l_ul"):
            params.zero_grad()
            _loss_terms(params, cfg, batch, masks)[term].backward()
            probes = 0
            attempts = 0
            while probes < 10:
                attempts += 1
                assert attempts < 400, f"could not find 10 usable probes for {term}"
                name = names[rng.integers(len(names))]
                tensor = params[name]
                flat_index = int(rng.integers(tensor.data.size))
                index = np.unravel_index(flat_index, tensor.data.shape)
                analytic = 0.0 if tensor.grad is None else float(tensor.grad[index])
                original = tensor.data[index]
                tensor.data[index] = original + step
                plus = _loss_terms(params, cfg, batch, masks)[term].item()
                tensor.data[index] = original - step
                minus = _loss_terms(params, cfg, batch, masks)[term].item()
                tensor.data[index] = original
                numeric = (plus - minus) / (2 * step)
                scale = max(abs(analytic), abs(numeric))
                if scale < 1e-8:
                    continue  # both gradients negligible; not a useful probe
                rel = abs(analytic - numeric) / scale
                assert rel < 1e-4, f"{term} grad mismatch at {name}{index}: {rel:.2e}"
                probes += 1


# -- 3 -----------------------------------------------------------------


def test_criterion_3_acquisition_equivalence():
    with criterion(3, "sample acquisition matches brute force on 1000 random instances"):
        rng = np.random.default_rng(123)
        for _ in range(1000):
            k = int(rng.integers(1, 9))
            v = int(rng.integers(2, 51))
            dists = rng.random((k, v)) + 1e-9
            dists /= dists.sum(axis=-1, keepdims=True)
            y_t = int(rng.integers(v))
            sets = acquire_samples(list(dists), y_t)
            # independent straight-line re-derivation
            positives, negatives = [], []
            for i in range(k):
                best = 0
                for j in range(1, v):
                    if dists[i, j] > dists[i, best]:
                        best = j
                if best != y_t:
                    negatives.append((dists[i, best], best))
                positives.append(dists[i, y_t])
            assert sets.positives == tuple(positives)
            assert sets.negatives == tuple(negatives)


# -- 4 -----------------------------------------------------------------


def _random_round_trip_quad(rng) -> AspectQuad:
    aspects = ["food", "foods", "spring rolls", "Service", "battery life", None]
    opinions = ["good", "excellent", "very tasty indeed", "awful", "too salty", None]
    categories = ["food#quality", "service#general", "laptop#design_features",
                  "restaurant#prices"]
    polarity = ["positive", "neutral", "negative"]
    return AspectQuad(aspects[rng.integers(len(aspects))],
                      opinions[rng.integers(len(opinions))],
                      categories[rng.integers(len(categories))],
                      polarity[rng.integers(3)])


def test_criterion_4_codec_round_trip():
    with criterion(4, "render/parse round trip on 1000 random quad lists per template"):
        kinds = (TemplateKind.paraphrase(), TemplateKind.special_symbols(),
                 TemplateKind.gas(), TemplateKind.special_symbols(("SP", "AC", "AT", "OT")))
        for kind in kinds:
            rng = np.random.default_rng(2024)
            implicit_seen = 0
            for _ in range(1000):
                quads = [_random_round_trip_quad(rng) for _ in range(rng.integers(1, 4))]
                implicit_seen += sum(q.at is None or q.ot is None for q in quads)
                parsed, diagnostics = parse(render(quads, kind), kind)
                assert diagnostics == []
                assert parsed == quads
            assert implicit_seen > 100  # implicit at/ot cases genuinely covered


# -- 5 -----------------------------------------------------------------


def test_criterion_5_degeneracy():
    with criterion(5, "p=0 gives bit-identical samples; degenerate config replays the baseline"):
        # (a) all K distributions identical when nothing is dropped
        model_cfg = ModelConfig(vocab_size=23, d_model=16, n_layers=1, n_heads=2, d_ff=32)
        params = init_params(model_cfg, np.random.default_rng(0))
        state = np.random.default_rng(1).normal(size=16)
        dists = mc_distributions(params, state, UncertaintyConfig(5, 0.0),
                                 np.random.default_rng(2))
        for row in dists[1:]:
            assert np.array_equal(row, dists[0])

        # (b) 20 optimizer steps: degenerate uncertainty config vs vanilla
        split = generate_synthetic(SyntheticSpec(train=16, dev=0, test=0, seed=2))
        data = CorpusSplit(split.train, (), ())
        common = dict(epochs=5, batch_size=4, d_model=16, n_layers=1, n_heads=2,
                      d_ff=32, learning_rate=2e-3, seed=3)  # 4 steps/epoch * 5 = 20 steps
        degenerate = TrainConfig(use_mc=True, mc_samples=1, dropout=0.0,
                                 use_mul=False, use_me=False, **common)
        params_a, _, report_a = train(degenerate, data)
        params_b, _, report_b = train(baseline_of(degenerate), data)
        for rec_a, rec_b in zip(report_a.epochs, report_b.epochs):
            assert rec_a["l_joint"] == rec_b["l_joint"]  # bit-identical floats
        for name in params_a.tensors:
            assert np.array_equal(params_a[name].data, params_b[name].data)


# -- 6 -----------------------------------------------------------------


def test_criterion_6_entropy_term_behavior():
    with criterion(6, "optimizing the entropy term alone monotonically sharpens a toy batch"):
        from quadgen.objectives import me_loss
        rng = np.random.default_rng(6)
        logits = Tensor(rng.normal(size=(1, 1, 8, 15)) * 0.2, requires_grad=True)
        mean_entropies = []
        for _ in range(50):
            probs = ad.softmax(logits)
            loss = me_loss(ad.reshape(probs, (1, 8, 15)))
            mean_entropies.append(loss.item() / 8)
            logits.grad = None
            loss.backward()
            logits.data -= 0.5 * logits.grad
        diffs = np.diff(mean_entropies)
        assert (diffs <= 1e-9).all(), f"entropy increased by {diffs.max():.2e}"
        assert mean_entropies[-1] < mean_entropies[0]


# -- 7 -----------------------------------------------------------------

EXPERIMENT_CFG = TrainConfig(epochs=20, warmup_epochs=8, d_model=32, n_layers=1,
                             n_heads=2, d_ff=64, learning_rate=2e-3, batch_size=16)


@pytest.mark.slow
def test_criterion_7_desk_scale_experiment():
    with criterion(7, "5-seed experiment: both runs >= 0.80 F1, no degradation beyond 0.02"):
        split = generate_synthetic(SyntheticSpec(train=800, dev=200, test=200, seed=7))
        vocab_size = len(build_vocabulary(split.train))
        assert 150 <= vocab_size <= 260, f"vocab size {vocab_size} not ~200"
        rows = []
        for seed in range(5):
            cfg = replace(EXPERIMENT_CFG, seed=seed)
            f1 = {}
            for label, run_cfg in (("baseline", baseline_of(cfg)), ("full", cfg)):
                params, vocab, _ = train(run_cfg, split)
                f1[label] = evaluate_model(params, vocab, split.test,
                                           run_cfg.template_kind()).f1
            rows.append(f1)
            print(f"  seed {seed}: baseline={f1['baseline']:.4f} "
                  f"full={f1['full']:.4f} delta={f1['full'] - f1['baseline']:+.4f}")
        mean_baseline = sum(r["baseline"] for r in rows) / len(rows)
        mean_full = sum(r["full"] for r in rows) / len(rows)
        print(f"  mean baseline={mean_baseline:.4f} mean full={mean_full:.4f} "
              f"delta={mean_full - mean_baseline:+.4f}")
        for row in rows:
            assert row["baseline"] >= 0.80, f"baseline below 0.80: {row}"
            assert row["full"] >= 0.80, f"full objective below 0.80: {row}"
        assert mean_full >= mean_baseline - 0.02


# -- 8 -----------------------------------------------------------------


def test_criterion_8_ablation_suite_shape(tmp_path):
    with criterion(8, "six ablation variants with per-seed results; -mc uses one distribution"):
        split = generate_synthetic(SyntheticSpec(train=24, dev=8, test=8, seed=11))
        cfg = TrainConfig(epochs=2, d_model=16, n_layers=1, n_heads=2, d_ff=32,
                          batch_size=8, learning_rate=2e-3)
        results = run_ablation_suite(split, cfg, seeds=(0, 1), checkpoint_dir=tmp_path)
        assert [row["variant"] for row in results] == [
            "full", "-me", "-mul", "-mul+ul", "-mul-me+ul", "-mc-dropout"]
        for row in results:
            assert [run["seed"] for run in row["runs"]] == [0, 1]
            assert row["errors"] == []

        # the -mc-dropout variant must have sampled from a single
        # (undropped) distribution: its dump has exactly one positive and
        # at most one negative per step
        params, vocab, extra = load_checkpoint(tmp_path / "no_mc_dropout_seed0.npz")
        variant_cfg = TrainConfig(**extra["config"])
        assert not variant_cfg.use_mc
        dump = inspect_negatives(params, vocab, list(split.dev), variant_cfg, limit=4)
        steps = [step for example in dump for step in example["steps"]]
        assert steps
        assert all(len(step["positives"]) == 1 for step in steps)
        assert all(len(step["negatives"]) <= 1 for step in steps)

        # contrast: the full variant draws K samples per step
        params_full, vocab_full, extra_full = load_checkpoint(tmp_path / "full_seed0.npz")
        full_cfg = TrainConfig(**extra_full["config"])
        dump_full = inspect_negatives(params_full, vocab_full, list(split.dev),
                                      full_cfg, limit=2)
        assert all(len(step["positives"]) == full_cfg.mc_samples
                   for example in dump_full for step in example["steps"])


# -- 9 -----------------------------------------------------------------


def test_criterion_9_low_resource_protocol():
    with criterion(9, "low-resource harness: 10%-50% in 5-point steps, nested, with deltas"):
        split = generate_synthetic(SyntheticSpec(train=40, dev=8, test=8, seed=13))
        cfg = TrainConfig(epochs=1, d_model=16, n_layers=1, n_heads=2, d_ff=32,
                          batch_size=8, learning_rate=2e-3)
        ratios = [0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50]
        rows = low_resource_run(split, ratios, cfg)
        assert [row["ratio"] for row in rows] == ratios
        assert len(rows) == 9
        previous: set = set()
        for ratio in ratios:
            chosen = set(nested_subset_indices(len(split.train), ratio, cfg.seed))
            assert previous <= chosen
            previous = chosen
        for row in rows:
            assert abs(row["delta"] - (row["unlikelihood_f1"] - row["baseline_f1"])) < 1e-12
            assert row["n_train"] == math.ceil(row["ratio"] * 40)


# -- 10 ----------------------------------------------------------------


def test_criterion_10_byte_identical_outputs(tmp_path):
    with criterion(10, "repeated commands produce byte-identical metrics outputs"):
        from quadgen.cli import main
        outputs = {}
        for tag in ("a", "b"):
            data = tmp_path / f"data_{tag}"
            ckpt = tmp_path / f"ckpt_{tag}.npz"
            metrics = tmp_path / f"metrics_{tag}.jsonl"
            report = tmp_path / f"score_{tag}.json"
            targets = tmp_path / f"targets_{tag}.txt"
            assert main(["gen-data", "--out", str(data), "--train", "24", "--dev", "8",
                         "--test", "8", "--seed", "21"]) == 0
            assert main(["train", "--data", str(data), "--out", str(ckpt),
                         "--metrics", str(metrics), "--epochs", "2", "--d_model", "16",
                         "--n_layers", "1", "--d_ff", "32", "--batch_size", "8",
                         "--seed", "4", "--quiet"]) == 0
            assert main(["encode", "--template", "gas", "--input",
                         str(data / "test.jsonl"), "--output", str(targets)]) == 0
            assert main(["score", "--pred", str(data / "test.jsonl"), "--gold",
                         str(data / "test.jsonl"), "--json-out", str(report)]) == 0
            outputs[tag] = (
                (data / "train.jsonl").read_bytes(),
                metrics.read_bytes(),
                targets.read_bytes(),
                report.read_bytes(),
            )
        assert outputs["a"] == outputs["b"]

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sexism_detect import corpus as C  # noqa: E402
from sexism_detect import model as M  # noqa: E402
from sexism_detect import tokenizer as T  # noqa: E402

DATA = Path(C.__file__).parent / "data"
TEST_DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def synthetic():
    return C.load_tsv(DATA / "synthetic.tsv", name="synthetic")


@pytest.fixture(scope="session")
def synthetic_tm(synthetic):
    return T.train_vocab([p.text for p in synthetic], max_vocab=300)


def toy_model(head="classifier", n_classes=3, vocab=50, seed=0, dropout=0.1):
    cfg = M.EncoderConfig(vocab_size=vocab, d_model=16, n_layers=2, n_heads=2, d_ffn=32,
                          max_len=12, dropout_prob=dropout, seed=seed)
    return M.init(cfg, head=head, n_classes=n_classes)


def perturbed(m, scale=0.3, seed=1):
    """Copy of ``m`` with every parameter jittered, so LayerNorm gains and
    biases are not at their trivial initial values."""
    m = m.copy()
    rng = np.random.default_rng(seed)
    for v in m.params.values():
        v += scale * rng.standard_normal(v.shape)
    return m


def toy_batch(vocab=50, seed=3, B=3, T=8):
    rng = np.random.default_rng(seed)
    ids = rng.integers(5, vocab, size=(B, T))
    mask = np.ones((B, T), dtype=np.int64)
    ids[:, 0] = T_CLS
    lengths = [T, T - 2, T - 3][:B]
    for b, L in enumerate(lengths):
        ids[b, L - 1] = T_SEP
        ids[b, L:] = 0
        mask[b, L:] = 0
    return ids, mask


T_CLS, T_SEP = T.CLS_ID, T.SEP_ID


def gradient_violations(m, ids, mask, targets, train_mode=False, seed=11, h=1e-6,
                        rel=1e-4, floor=1e-8):
    """Compare analytic gradients with central differences, tensor by tensor.

    Returns ``{name: worst excess}`` for tensors where some entry breaks
    ``|a - n| <= rel * max(|a|, |n|) + floor`` (empty when all pass), and the
    number of entries checked.  With ``train_mode`` each evaluation reuses the
    same dropout masks by reseeding the generator.
    """
    from oracles import central_differences

    def rng():
        return np.random.default_rng(seed) if train_mode else None

    _, analytic = M.loss_and_grads(m, ids, targets, train_mode=train_mode, rng=rng(), mask=mask)

    def f():
        return M.loss_and_grads(m, ids, targets, train_mode=train_mode, rng=rng(), mask=mask,
                                param_names=())[0]

    numeric = central_differences(f, m.params, h=h)
    bad, n = {}, 0
    for k in m.params:
        a, num = analytic[k], numeric[k]
        excess = np.abs(a - num) - (rel * np.maximum(np.abs(a), np.abs(num)) + floor)
        n += a.size
        if excess.max() > 0:
            bad[k] = float(excess.max())
    return bad, n


def separable_set(n=50, seed=0):
    """Task-1 posts told apart by a single cue word, plus shared filler."""
    rng = np.random.default_rng(seed)
    filler = ["the", "day", "was", "long", "and", "we", "talked", "about", "it"]
    posts = []
    for i in range(n):
        sexist = i % 2 == 0
        words = list(rng.choice(filler, size=4))
        words.insert(int(rng.integers(0, 5)), "kitchen" if sexist else "garden")
        posts.append(C.Post(id=f"s{i}", language="en", text=" ".join(words), source="twitter",
                            task1="sexist" if sexist else "non-sexist"))
    return C.LabeledDataset(tuple(posts), name="separable")


# ---------------------------------------------------------------------------
# session-wide audit of MLM corruption: no special token may ever be touched

MLM_AUDIT = {"calls": 0, "selections": 0, "special_corruptions": 0}
ACCEPTANCE_LINES: list[str] = []


def _audited(fn):
    def wrapper(enc, *args, **kwargs):
        out = fn(enc, *args, **kwargs)
        ids = np.asarray(getattr(enc, "ids", enc))
        special = ids < T.N_SPECIALS
        MLM_AUDIT["calls"] += 1
        MLM_AUDIT["selections"] += int(out.selected.sum())
        MLM_AUDIT["special_corruptions"] += int(
            (out.selected & special).sum() + (out.input_ids[special] != ids[special]).sum())
        return out
    return wrapper


def pytest_configure(config):
    from sexism_detect import train

    if not hasattr(train.mlm_corrupt, "__wrapped_by_audit__"):
        train.mlm_corrupt = _audited(train.mlm_corrupt)
        train.mlm_corrupt.__wrapped_by_audit__ = True


def pytest_terminal_summary(terminalreporter):
    tr = terminalreporter
    if ACCEPTANCE_LINES:
        tr.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            tr.write_line(line)
    if MLM_AUDIT["calls"]:
        tr.section("MLM corruption audit")
        tr.write_line(
            f"{MLM_AUDIT['calls']} mlm_corrupt calls, {MLM_AUDIT['selections']} selections, "
            f"{MLM_AUDIT['special_corruptions']} special-token corruptions")


def pytest_sessionfinish(session, exitstatus):
    if MLM_AUDIT["special_corruptions"] and exitstatus == 0:
        session.exitstatus = 1

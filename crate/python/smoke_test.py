"""Exercises the claimvec extension end to end on a small synthetic population."""

import json
import math
import pathlib
import tempfile

import claimvec


def main() -> None:
    with tempfile.TemporaryDirectory() as tmp:
        root = pathlib.Path(tmp)
        n_members, n_claims = claimvec.synthesize(root / "data", n_patients=400, seed=5)
        assert n_members == 400 and n_claims > 0

        cohort = claimvec.Cohort.from_files(root / "data" / "claims.csv", root / "data" / "members.csv")
        assert 0 < len(cohort) <= 400
        ids = cohort.patient_ids()
        assert cohort.tokens(ids[0])

        scores = cohort.risk_scores()
        assert abs(sum(scores.values()) / len(scores) - 1.0) < 1e-9

        vocab = claimvec.build_vocab(cohort)
        assert abs(sum(vocab.noise_probs()) - 1.0) < 1e-9
        assert vocab.id(vocab.tokens()[0]) == 0

        emb = claimvec.train_embedding(cohort, model="PV_DM", dim=16, window=5, epochs=3, seed=9)
        assert emb.dim == 16 and emb.n_docs == len(cohort)
        losses = emb.epoch_losses
        assert len(losses) == 3 and losses[-1] < losses[0]
        v = emb.doc_vector(ids[0])
        assert math.isclose(claimvec.cosine_similarity(v, v), 1.0)
        inferred = emb.infer(cohort.tokens(ids[1]), epochs=10, seed=3)
        assert inferred == emb.infer(cohort.tokens(ids[1]), epochs=10, seed=3)
        emb.save(root / "emb.bin")
        assert claimvec.EmbeddingModel.load(root / "emb.bin").doc_vector(ids[0]) == v

        train, test = claimvec.split_train_test(ids, 0.7, seed=1)
        assert len(train) + len(test) == len(ids)
        names, rows = cohort.features()
        assert len(names) == 21
        by_id = dict(zip(ids, rows))
        x_tr = [by_id[i] for i in train]
        y_tr = [scores[i] for i in train]
        x_te = [by_id[i] for i in test]
        y_te = [scores[i] for i in test]

        ridge = claimvec.fit_ridge(x_tr, y_tr, columns=names)
        assert ridge.kind == "ridge" and ridge.lambda_ > 0
        gbt = claimvec.fit_gbt(x_tr, y_tr, columns=names, n_rounds=20, min_samples_leaf=5)
        mse = gbt.train_mse
        assert all(b <= a + 1e-12 for a, b in zip(mse, mse[1:]))
        for model in (ridge, gbt):
            pred = model.predict(x_te)
            assert math.isfinite(claimvec.r_squared(y_te, pred))
            assert claimvec.mae(y_te, pred) >= 0
            back = claimvec.Model.from_json(model.to_json())
            assert back.predict(x_te) == pred

        demo = cohort.demographics()
        pred_all = gbt.predict(rows)
        cells = claimvec.predictive_ratios(
            pred_all, [scores[i] for i in ids], [s for s, _ in demo], [a for _, a in demo]
        )
        assert sum(n for _, _, n, _ in cells) == len(ids)

        config = {
            "paths": {"claims": "data/claims.csv", "members": "data/members.csv", "workdir": "work"},
            "embed": {"dim": 16, "window": 5, "epochs": 2, "seed": 4},
            "cv": {"k_folds": 3},
            "gbt": {"n_rounds": 10, "min_samples_leaf": 10},
        }
        (root / "config.json").write_text(json.dumps(config))
        reports = claimvec.run_pipeline(root / "config.json")
        assert [r["model_name"] for r in reports] == [
            "baseline1_ridge",
            "baseline1_gbt",
            "embedding_ridge",
            "embedding_gbt",
        ]
        assert claimvec.load_reports(root / "work") == reports

        try:
            claimvec.load_reports(root / "missing")
        except ValueError as e:
            assert "manifest" in str(e)
        else:
            raise AssertionError("missing manifest was accepted")

        for r in reports:
            print(f"{r['model_name']:16} R2 {r['r2']:.3f}  MAE {r['mae']:.3f}")
    print("smoke test passed")


if __name__ == "__main__":
    main()

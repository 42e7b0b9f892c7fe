import numpy as np
import pytest

import fdcheck
import straightline_oracle as oracle
from mascara import embedder
from mascara.grad import (
    BiasAdd,
    ComputationGraph,
    Conv2D,
    Dense,
    Flatten,
    L2Normalize,
    MaxPool2D,
    ReLU,
)
from modelutil import blob_dataset, pixel_image, tiny_linear_model


def graph_to_oracle_plan(graph):
    """Translate a ComputationGraph layer list into the oracle's plan tuples."""
    plan = []
    for layer in graph.layers:
        if isinstance(layer, Conv2D):
            plan.append(("conv2d", {"weight": layer.weight, "stride": layer.stride, "pad": layer.pad}))
        elif isinstance(layer, BiasAdd):
            plan.append(("bias_add", {"weight": layer.weight}))
        elif isinstance(layer, ReLU):
            plan.append(("relu", {}))
        elif isinstance(layer, MaxPool2D):
            plan.append(("maxpool2d", {"size": layer.size, "stride": layer.stride}))
        elif isinstance(layer, Flatten):
            plan.append(("flatten", {}))
        elif isinstance(layer, Dense):
            plan.append(("dense", {"weight": layer.weight}))
        elif isinstance(layer, L2Normalize):
            plan.append(("l2normalize", {}))
        else:
            raise AssertionError(f"unknown layer {layer!r}")
    return plan


class TestSpecs:
    def test_default_specs_are_distinct(self):
        embedder.check_distinct(embedder.SURROGATE_SPEC, embedder.TARGET_SPEC)
        assert embedder.SURROGATE_SPEC.input_size == (160, 160)
        assert embedder.TARGET_SPEC.input_size == (112, 112)

    def test_identical_pair_rejected(self):
        s = embedder.SURROGATE_SPEC
        t = embedder.EmbedderSpec(role="target", input_size=s.input_size,
                                  architecture=s.architecture, seed=s.seed)
        with pytest.raises(ValueError):
            embedder.check_distinct(s, t)

    def test_unknown_architecture_rejected(self):
        with pytest.raises(ValueError):
            embedder.EmbedderSpec(role="surrogate", input_size=(160, 160),
                                  architecture="resnet9000", seed=0)

    def test_both_architectures_build_and_output_unit_vectors(self):
        specs = [embedder.EmbedderSpec(role="target", input_size=(112, 112),
                                       architecture=arch, seed=7)
                 for arch in sorted(embedder.ARCHITECTURES)]
        for spec in specs:
            model = embedder.build_model(spec)
            rng = np.random.default_rng(3)
            x = rng.uniform(0, 1, (*spec.input_size, 3))
            e = embedder.embed(model, x)
            assert e.shape == (embedder.EMBEDDING_DIM,)
            assert abs(np.linalg.norm(e) - 1.0) < 1e-6


class TestEmbed:
    def test_deterministic(self):
        model = embedder.build_model(embedder.TARGET_SPEC)
        x = np.random.default_rng(5).uniform(0, 1, (112, 112, 3))
        assert np.array_equal(embedder.embed(model, x), embedder.embed(model, x))

    def test_wrong_shape_rejected(self):
        model = embedder.build_model(embedder.TARGET_SPEC)
        with pytest.raises(Exception):
            embedder.embed(model, np.zeros((64, 64, 3)))

    def test_matches_straightline_oracle(self):
        # short training first so the weights are not just the seeded init
        dataset = blob_dataset(8, 4, (112, 112), seed=11)
        cfg = embedder.TrainConfig(epochs=1, steps_per_epoch=2, batch_size=2,
                                   learning_rate=0.05, seed=7)
        model, _ = embedder.train(embedder.TARGET_SPEC, dataset, cfg)
        x = np.random.default_rng(9).uniform(0, 1, (112, 112, 3))
        got = embedder.embed(model, x)
        want = oracle.run_layers(x, graph_to_oracle_plan(model.graph), model.graph.weights)
        assert np.max(np.abs(got - want)) < 1e-6


class TestLosses:
    def test_triplet_satisfied_case(self):
        a = np.zeros(4); a[0] = 1.0
        n = np.zeros(4); n[1] = 1.0  # ||a-n||^2 = 2
        assert embedder.triplet_loss(a, a, n, margin=0.2) == 0.0

    def test_triplet_collapsed_case(self):
        a = np.full(4, 0.5)
        assert embedder.triplet_loss(a, a, a, margin=0.2) == pytest.approx(0.2)

    def test_triplet_matches_hand_arithmetic(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            a, p, n = (v / np.linalg.norm(v) for v in rng.normal(size=(3, 8)))
            dp = sum((a[i] - p[i]) ** 2 for i in range(8))
            dn = sum((a[i] - n[i]) ** 2 for i in range(8))
            want = max(0.0, dp - dn + 0.2)
            assert embedder.triplet_loss(a, p, n, margin=0.2) == pytest.approx(want, abs=1e-12)

    def test_attack_loss_at_coincidence(self):
        a = np.zeros(8); a[3] = 1.0
        assert embedder.attack_loss(a, a, a) == pytest.approx(0.8)

    def test_attack_loss_fully_dodged(self):
        a = np.zeros(4); a[0] = 1.0
        p = np.zeros(4); p[1] = 1.0  # ||a-p||^2 = 2
        assert embedder.attack_loss(a, p, a) == 0.0

    def test_attack_loss_matches_hand_arithmetic(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            a, p, n = (v / np.linalg.norm(v) for v in rng.normal(size=(3, 8)))
            dp = sum((a[i] - p[i]) ** 2 for i in range(8))
            dn = sum((a[i] - n[i]) ** 2 for i in range(8))
            want = max(0.0, dn - dp + 0.8)
            assert embedder.attack_loss(a, p, n) == pytest.approx(want, abs=1e-12)

    def test_losses_invariant_under_orthogonal_transform(self):
        rng = np.random.default_rng(19)
        for _ in range(10):
            a, p, n = (v / np.linalg.norm(v) for v in rng.normal(size=(3, 16)))
            q, _ = np.linalg.qr(rng.normal(size=(16, 16)))
            before_t = embedder.triplet_loss(a, p, n)
            before_a = embedder.attack_loss(a, p, n)
            after_t = embedder.triplet_loss(q @ a, q @ p, q @ n)
            after_a = embedder.attack_loss(q @ a, q @ p, q @ n)
            assert abs(before_t - after_t) < 1e-5
            assert abs(before_a - after_a) < 1e-5

    def test_batch_wrapper_embeds_then_scores(self):
        model = tiny_linear_model()
        a = pixel_image(0)
        n = pixel_image(1)
        batch = embedder.TripletBatch(anchor=a, positive=a, negative=n)
        assert embedder.batch_triplet_loss(model, batch) == 0.0

    def test_batch_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            embedder.TripletBatch(anchor=np.zeros((2, 2, 3)),
                                  positive=np.zeros((3, 3, 3)),
                                  negative=np.zeros((2, 2, 3)))

    def test_batch_margin_must_be_positive(self):
        z = np.zeros((2, 2, 3))
        with pytest.raises(ValueError):
            embedder.TripletBatch(anchor=z, positive=z, negative=z, margin=0.0)


class TestUnitMean:
    def test_single_vector_is_returned_normalized(self):
        v = np.array([3.0, 4.0] + [0.0] * 6)
        m = embedder.unit_mean([v])
        assert np.allclose(m, v / 5.0)

    def test_cancelling_vectors_fall_back_to_basis(self):
        v = np.zeros(8); v[2] = 1.0
        m = embedder.unit_mean([v, -v])
        want = np.zeros(8); want[0] = 1.0
        assert np.array_equal(m, want)

    def test_mean_of_copies_is_the_vector(self):
        rng = np.random.default_rng(23)
        v = rng.normal(size=16)
        v /= np.linalg.norm(v)
        assert np.allclose(embedder.unit_mean([v, v, v]), v, atol=1e-12)


class TestInputGradient:
    def test_inactive_hinge_gives_exact_zero(self):
        model = tiny_linear_model()
        x = pixel_image(0)
        p = pixel_image(1)  # orthogonal embeddings: ||a-p||^2 = 2
        # negative == anchor image, so ||a-n||^2 = 0 and 0 - 2 + 0.8 < 0
        g = embedder.input_gradient(model, x, [p], x)
        assert g.shape == x.shape
        assert not g.any()

    def test_empty_positive_set_rejected(self):
        model = tiny_linear_model()
        x = pixel_image(0)
        with pytest.raises(ValueError):
            embedder.input_gradient(model, x, [], x)

    def test_matches_finite_differences(self):
        spec = embedder.TARGET_SPEC
        model = embedder.build_model(spec)
        rng = np.random.default_rng(29)
        x = rng.uniform(0.2, 0.8, (112, 112, 3))
        positives = [rng.uniform(0, 1, x.shape) for _ in range(2)]
        negative = rng.uniform(0, 1, x.shape)

        pos_embs = [embedder.embed(model, p) for p in positives]
        neg_emb = embedder.embed(model, negative)
        # random-init embeddings cluster, so every hinge sits near its 0.8
        # margin, far from the kink
        for pe in pos_embs:
            loss = embedder.attack_loss(embedder.embed(model, x), pe, neg_emb)
            assert loss > 0.1

        analytic = embedder.input_gradient(model, x, positives, negative)

        def scalar():
            e = embedder.embed(model, x)
            return float(np.mean([embedder.attack_loss(e, pe, neg_emb) for pe in pos_embs]))

        coords = [
            int(np.ravel_multi_index(tuple(c), x.shape))
            for c in rng.integers(0, (112, 112, 3), size=(16, 3))
        ]
        # epsilon 1e-4: small enough that O(eps^2) truncation through the
        # normalize layer stays under the 1e-3 gate
        numeric = fdcheck.fd_input_grad(scalar, x, 1e-4, coords).reshape(-1)
        flat_analytic = analytic.reshape(-1)
        worst = max(
            fdcheck.max_rel_error(np.array([flat_analytic[c]]), np.array([numeric[c]]))
            for c in coords
        )
        assert worst < 1e-3

    def test_duplicating_positives_keeps_mean_gradient(self):
        spec = embedder.TARGET_SPEC
        model = embedder.build_model(spec)
        rng = np.random.default_rng(31)
        x = rng.uniform(0, 1, (112, 112, 3))
        p1 = rng.uniform(0, 1, x.shape)
        p2 = rng.uniform(0, 1, x.shape)
        n = rng.uniform(0, 1, x.shape)
        g1 = embedder.input_gradient(model, x, [p1, p2], n)
        g2 = embedder.input_gradient(model, x, [p1, p2, p1, p2], n)
        assert np.allclose(g1, g2, rtol=1e-9, atol=1e-12)


class TestTrain:
    def small_dataset(self, size=(112, 112)):
        return blob_dataset(8, 4, size, seed=41)

    def test_zero_epochs_equals_seeded_init(self):
        dataset = self.small_dataset()
        cfg = embedder.TrainConfig(epochs=0, seed=1)
        model, trace = embedder.train(embedder.TARGET_SPEC, dataset, cfg)
        assert trace == []
        init = embedder.build_model(embedder.TARGET_SPEC)
        for k, w in init.graph.weights.items():
            assert np.array_equal(model.graph.weights[k], w)

    def test_same_seed_same_weights(self):
        dataset = self.small_dataset()
        cfg = embedder.TrainConfig(epochs=1, steps_per_epoch=3, batch_size=2, seed=5)
        m1, t1 = embedder.train(embedder.TARGET_SPEC, dataset, cfg)
        m2, t2 = embedder.train(embedder.TARGET_SPEC, dataset, cfg)
        assert t1 == t2
        for k in m1.graph.weights:
            assert np.array_equal(m1.graph.weights[k], m2.graph.weights[k])

    def test_too_few_identities_rejected(self):
        dataset = blob_dataset(5, 4, (112, 112), seed=1)
        with pytest.raises(ValueError, match="identities"):
            embedder.train(embedder.TARGET_SPEC, dataset, embedder.TrainConfig())

    def test_too_few_images_rejected(self):
        dataset = blob_dataset(8, 4, (112, 112), seed=1)
        dataset["id00"] = dataset["id00"][:2]
        with pytest.raises(ValueError, match="id00"):
            embedder.train(embedder.TARGET_SPEC, dataset, embedder.TrainConfig())

    @pytest.mark.slow
    def test_loss_decreases_and_identities_separate(self):
        dataset = blob_dataset(10, 6, (112, 112), seed=43, noise=0.08)
        train_set = {k: v[:4] for k, v in dataset.items()}
        held_out = {k: v[4:] for k, v in dataset.items()}
        cfg = embedder.TrainConfig(epochs=4, steps_per_epoch=25, batch_size=6,
                                   learning_rate=0.08, seed=3)
        model, trace = embedder.train(embedder.TARGET_SPEC, train_set, cfg)
        assert trace[-1] < trace[0]

        embs = {k: [embedder.embed(model, im) for im in v] for k, v in held_out.items()}
        intra, inter = [], []
        keys = sorted(embs)
        for i, ki in enumerate(keys):
            intra.append(1.0 - float(np.dot(embs[ki][0], embs[ki][1])))
            for kj in keys[i + 1:]:
                inter.append(1.0 - float(np.dot(embs[ki][0], embs[kj][0])))
        assert np.median(intra) < np.median(inter)


class TestModelIO:
    def test_round_trip_preserves_embeddings(self, tmp_path):
        model = embedder.build_model(embedder.TARGET_SPEC)
        embedder.save_model(model, tmp_path / "m")
        loaded = embedder.load_model(tmp_path / "m")
        assert loaded.spec == model.spec
        x = np.random.default_rng(47).uniform(0, 1, (112, 112, 3))
        assert np.array_equal(embedder.embed(model, x), embedder.embed(loaded, x))

    def test_sidecar_disagreement_rejected(self, tmp_path):
        model = embedder.build_model(embedder.TARGET_SPEC)
        embedder.save_model(model, tmp_path / "m")
        import json
        sidecar = json.loads((tmp_path / "m" / "spec.json").read_text())
        sidecar["input_size"] = [160, 160]
        sidecar["architecture"] = "slim3"
        (tmp_path / "m" / "spec.json").write_text(json.dumps(sidecar))
        with pytest.raises(ValueError):
            embedder.load_model(tmp_path / "m")


class TestEnsemble:
    """Ensembles stand in for a single model on the attack side only, so the
    contract is arithmetic: cosine distance equals the member mean, and so
    does the input gradient."""

    def _member(self, shift):
        w = np.zeros((embedder.EMBEDDING_DIM, 12))
        for i in range(12):
            w[(i + shift) % embedder.EMBEDDING_DIM, i] = 1.0
        graph = ComputationGraph((2, 2, 3), [Flatten(), Dense("w"), L2Normalize()],
                                 {"w": w})
        spec = embedder.EmbedderSpec(role="surrogate", input_size=(2, 2),
                                     architecture="slim3", seed=100 + shift)
        return embedder.EmbedderModel(spec=spec, graph=graph)

    def test_distance_is_member_mean(self, rng):
        ens = embedder.EnsembleModel((self._member(0), self._member(3)))
        a = rng.uniform(0.1, 0.9, (2, 2, 3))
        b = rng.uniform(0.1, 0.9, (2, 2, 3))
        ea, eb = embedder.embed(ens, a), embedder.embed(ens, b)
        assert abs(float(np.linalg.norm(ea)) - 1.0) < 1e-12
        d_ens = 1.0 - float(np.dot(ea, eb))
        per = [1.0 - float(np.dot(embedder.embed(m, a), embedder.embed(m, b)))
               for m in ens.members]
        assert abs(d_ens - sum(per) / len(per)) < 1e-12

    def test_gradient_is_member_mean(self, rng):
        members = (self._member(0), self._member(5))
        ens = embedder.EnsembleModel(members)
        x = rng.uniform(0.2, 0.8, (2, 2, 3))
        pos = [np.clip(x + rng.normal(0.0, 0.05, x.shape), 0.0, 1.0)]
        neg = pixel_image(7)
        g = embedder.input_gradient(ens, x, pos, neg)
        per = np.mean([embedder.input_gradient(m, x, pos, neg) for m in members],
                      axis=0)
        assert g.any()
        assert np.array_equal(g, per)

    def test_single_member_matches_plain_model(self, rng):
        m = self._member(2)
        ens = embedder.EnsembleModel((m,))
        x = rng.uniform(0.1, 0.9, (2, 2, 3))
        assert np.allclose(embedder.embed(ens, x), embedder.embed(m, x))
        assert ens.input_shape == m.input_shape

    def test_membership_validated(self):
        with pytest.raises(ValueError, match="at least one"):
            embedder.EnsembleModel(())
        odd = embedder.EmbedderModel(
            spec=embedder.EmbedderSpec(role="surrogate", input_size=(3, 3),
                                       architecture="slim3", seed=9),
            graph=ComputationGraph((3, 3, 3), [Flatten(), Dense("w"), L2Normalize()],
                                   {"w": np.ones((embedder.EMBEDDING_DIM, 27))}))
        with pytest.raises(ValueError, match="input shape"):
            embedder.EnsembleModel((self._member(0), odd))

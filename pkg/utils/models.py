"""
The two pair-activity classifiers and their training loops:

- LstmClassifier: stacked LSTM over flattened 20x3 frames, softmax over 9 classes,
  trained supervised with categorical cross-entropy.
- StgcnVae: spatio-temporal graph convolution encoder, Gaussian latent and a
  mirrored decoder, trained on unlabeled samples by minimizing -ELBO.
- TransferClassifier: a frozen copy of the trained VAE encoder plus average
  pooling, capped with a 9-way softmax that is the only trained part.
"""

import logging
from dataclasses import asdict, dataclass

import numpy as np
from tqdm import tqdm

from utils.checkpoint import Checkpoint, rng_state
from utils.config import LstmClassifierConfig, VaeConfig
from utils.errors import DataError, MissingCheckpointError
from utils.layers import (
    AdjacencyMatrix,
    Dense,
    Module,
    StackedLSTM,
    STGCNLayer,
    Standardizer,
    categorical_crossentropy,
    elbo_loss,
    flatten_frames,
    kl_gaussian,
    normalized_adjacency,
    reconstruction_nll,
    sample_latent,
    softmax_dense,
)
from utils.optim import Adam
from utils.skeleton import CLASS_NAMES, NUM_CLASSES, NUM_STATES, POSE_JOINT_COUNT, SKELETON_EDGES, one_hot
from utils.tensor import mean_pool, reshape

logger = logging.getLogger(__name__)

MODEL_KINDS = ("lstm", "vae")
POOL_GROUPS = {"global": 1, "person": 2}
COORDINATES = 3
PREDICT_BATCH = 64


def build_adjacency_two_skeletons(edges=SKELETON_EDGES, joints_per_person=POSE_JOINT_COUNT):
    """
    Block-diagonal normalized adjacency for two skeletons side by side

    Parameters:
    edges (list[tuple]): Tree edges of one 10-joint skeleton
    joints_per_person (int): Nodes per skeleton

    Returns:
    AdjacencyMatrix: 20-node matrix with no edges between the two people
    """
    single = normalized_adjacency(edges, joints_per_person)
    size = 2 * joints_per_person
    matrix = np.zeros((size, size))
    matrix[:joints_per_person, :joints_per_person] = single.matrix
    matrix[joints_per_person:, joints_per_person:] = single.matrix
    shifted = tuple((u + joints_per_person, v + joints_per_person) for u, v in single.edges)
    return AdjacencyMatrix(size, matrix, single.edges + shifted)


class ArraySource:
    """In-memory samples with the same access methods as a DatasetManifest"""

    def __init__(self, tensors, labels=None):
        self._tensors = np.asarray(tensors)
        self._labels = None if labels is None else np.asarray(labels, dtype=np.int64)

    def __len__(self):
        return len(self._tensors)

    def tensors(self, indices=None, dtype=np.float64, counter=None):
        indices = np.arange(len(self)) if indices is None else np.asarray(list(indices), dtype=np.int64)
        return self._tensors[indices].astype(dtype)

    def labels(self, indices=None):
        if self._labels is None:
            raise DataError("this sample source carries no labels")
        indices = np.arange(len(self)) if indices is None else np.asarray(list(indices), dtype=np.int64)
        return self._labels[indices]


class LstmClassifier(Module):
    kind = "lstm"

    def __init__(self, config, rng, dtype=np.float64):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.input_scaler = Standardizer(config.input_size, self.dtype)
        self.lstm = StackedLSTM(config.input_size, config.hidden_size, config.layers, rng, self.dtype)
        self.head = Dense(config.hidden_size, config.classes, rng, self.dtype)

    def forward(self, x):
        """B x T x 20 x 3 samples -> B x 9 logits"""
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 4 or x.shape[2] * x.shape[3] != self.config.input_size:
            raise DataError(f"LSTM classifier expects B x T x 20 x 3 samples, got {x.shape}")
        return self.head(self.lstm(self.input_scaler(flatten_frames(x))))

    def probabilities(self, x):
        x = np.asarray(x, dtype=self.dtype)
        return softmax_dense(self.lstm(self.input_scaler(flatten_frames(x))), self.head)

    def architecture(self):
        return {"config": asdict(self.config), "dtype": self.dtype.name}


class StgcnEncoder(Module):
    """STGCN stack with ReLU followed by average pooling over frames and the nodes of each pool group"""

    def __init__(self, channels, adjacency, kernel_size, rng, dtype=np.float64, pool_groups=1):
        self.channels = list(channels)
        self.pool_groups = pool_groups
        self.kernel_size = kernel_size
        self.adjacency = adjacency
        sizes = [COORDINATES] + list(channels)
        self.layers = [
            STGCNLayer(c_in, c_out, adjacency, kernel_size, rng, dtype)
            for c_in, c_out in zip(sizes, sizes[1:])
        ]

    @property
    def out_channels(self):
        return self.layers[-1].out_channels

    @property
    def out_features(self):
        return self.pool_groups * self.out_channels

    def features(self, x):
        h = x
        for layer in self.layers:
            h = layer(h)
        return h

    def forward(self, x):
        return mean_pool(self.features(x), self.pool_groups)


class StgcnVae(Module):
    kind = "vae"

    def __init__(self, config, frames, adjacency, rng, dtype=np.float64):
        self.config = config
        self.frames = frames
        self.adjacency = adjacency
        self.dtype = np.dtype(dtype)
        nodes = adjacency.node_count
        last = config.channels[-1]
        self.encoder = StgcnEncoder(
            config.channels, adjacency, config.temporal_kernel, rng, self.dtype, POOL_GROUPS[config.pool],
        )
        pooled = self.encoder.out_features
        self.mu_head = Dense(pooled, config.latent_dim, rng, self.dtype)
        self.logvar_head = Dense(pooled, config.latent_dim, rng, self.dtype)
        self.decoder_input = Dense(config.latent_dim, frames * nodes * last, rng, self.dtype)
        decoder = config.decoder_channels
        self.decoder_layers = [
            STGCNLayer(c_in, c_out, adjacency, config.temporal_kernel, rng, self.dtype)
            for c_in, c_out in zip(decoder, decoder[1:])
        ]
        self.output = Dense(decoder[-1], COORDINATES, rng, self.dtype)
        self.trained = False

    def encode(self, x):
        pooled = self.encoder(x)
        return self.mu_head(pooled), self.logvar_head(pooled)

    def decode(self, z):
        """B x d latents -> B x T x V x 3 reconstruction means"""
        block = reshape(
            self.decoder_input(z),
            (z.shape[0], self.frames, self.adjacency.node_count, self.config.channels[-1]),
        )
        for layer in self.decoder_layers:
            block = layer(block)
        return self.output(block)

    def forward(self, x, rng):
        """
        Encode, draw vae.samples posterior samples and decode each

        Returns:
        tuple: (list of reconstructions, mu, logvar, list of GaussianLatent)
        """
        x = self._check(x)
        mu, logvar = self.encode(x)
        latents = [sample_latent(mu, logvar, rng) for _ in range(self.config.samples)]
        return [self.decode(latent.z) for latent in latents], mu, logvar, latents

    def loss(self, x, rng):
        x = self._check(x)
        recons, mu, logvar, _ = self.forward(x, rng)
        return elbo_loss(recons, x, mu, logvar)

    def _check(self, x):
        x = np.asarray(x, dtype=self.dtype)
        expected = (self.frames, self.adjacency.node_count, COORDINATES)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise DataError(f"VAE expects B x {' x '.join(map(str, expected))} samples, got {x.shape}")
        return x

    def architecture(self):
        return {
            "config": asdict(self.config),
            "frames": self.frames,
            "nodes": self.adjacency.node_count,
            "dtype": self.dtype.name,
        }


class TransferClassifier(Module):
    kind = "transfer"

    def __init__(self, encoder, classes, rng, dtype=np.float64):
        self.encoder = encoder.freeze()
        self.dtype = np.dtype(dtype)
        self.feature_scaler = Standardizer(encoder.out_features, self.dtype)
        self.head = Dense(encoder.out_features, classes, rng, self.dtype)

    def forward(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 4 or x.shape[-1] != COORDINATES:
            raise DataError(f"transfer classifier expects B x T x V x 3 samples, got {x.shape}")
        return self.head(self.feature_scaler(self.encoder(x)))

    def probabilities(self, x):
        return softmax_dense(self.feature_scaler(self.encoder(np.asarray(x, dtype=self.dtype))), self.head)

    def architecture(self):
        return {
            "channels": self.encoder.channels,
            "temporal_kernel": self.encoder.kernel_size,
            "pool_groups": self.encoder.pool_groups,
            "nodes": self.encoder.adjacency.node_count,
            "edges": [list(e) for e in self.encoder.adjacency.edges],
            "classes": self.head.out_features,
            "dtype": self.dtype.name,
        }

    def trainable_parameters(self):
        return {name: p for name, p in self.parameters().items() if p.trainable}

    def encoder_blob(self):
        """Encoder parameters as one byte string, for freeze checks"""
        return b"".join(p.data.tobytes() for _, p in self.encoder.named_parameters())


@dataclass
class TrainingResult:
    model: Module
    loss_curve: list
    initial_loss: float
    optimizer: Adam
    rng: np.random.Generator

    def to_checkpoint(self, metadata=None):
        return model_checkpoint(self.model, self.optimizer, self.rng, metadata)


def _show_progress():
    return logger.isEnabledFor(logging.INFO)


def _batches(indices, batch_size):
    for start in range(0, len(indices), batch_size):
        yield indices[start:start + batch_size]


def _mean_loss(loss_fn, indices, batch_size):
    total = 0.0
    for batch in _batches(indices, batch_size):
        total += loss_fn(batch).item() * len(batch)
    return total / len(indices)


def fit(model, loss_fn, indices, epochs, training, optimizer_config, rng, description, parameters=None):
    """
    Mini-batch training with per-epoch seeded shuffling

    Parameters:
    model (Module): Model whose parameters are updated
    loss_fn (callable): batch indices -> scalar loss Tensor
    indices (np.ndarray): Training sample indices
    epochs (int): Passes over the data
    training (TrainingConfig): Batch size
    optimizer_config (OptimizerConfig): Adam hyperparameters
    rng (np.random.Generator): Shuffling source
    description (str): Label for progress output
    parameters (dict): Parameters to optimize, all of the model's by default

    Returns:
    tuple: (epoch-mean loss curve, initial loss, optimizer)
    """
    optimizer = Adam.from_config(parameters if parameters is not None else model.parameters(), optimizer_config)
    initial = _mean_loss(loss_fn, indices, training.batch_size)
    logger.info(f"{description}: {len(indices)} samples, initial loss {initial:.4f}")
    curve = []
    for epoch in tqdm(range(epochs), desc=description, disable=not _show_progress()):
        order = rng.permutation(indices)
        total = 0.0
        for batch in _batches(order, training.batch_size):
            loss = loss_fn(batch)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.item() * len(batch)
        curve.append(total / len(order))
        logger.info(f"{description} epoch {epoch + 1}/{epochs}: loss {curve[-1]:.4f}")
    return curve, initial, optimizer


def _training_indices(source, indices, training, rng):
    indices = np.arange(len(source)) if indices is None else np.asarray(sorted(indices), dtype=np.int64)
    if len(indices) == 0:
        raise DataError("training set is empty")
    cap = training.max_train_samples
    if cap and len(indices) > cap:
        indices = np.sort(rng.choice(indices, size=cap, replace=False))
        logger.info(f"Training on a seeded subsample of {cap} samples")
    return indices


def train_lstm_classifier(source, config, seed, indices=None):
    """
    Train the stacked-LSTM classifier with categorical cross-entropy

    Parameters:
    source (DatasetManifest | ArraySource): Labeled samples
    config (PipelineConfig): Model, optimizer and training sections are used
    seed (int): Seed for initialization and shuffling
    indices (list[int]): Training sample indices, all when None

    Returns:
    TrainingResult: Trained model, loss curve and optimizer state
    """
    rng = np.random.default_rng(seed)
    dtype = np.dtype(config.training.dtype)
    indices = _training_indices(source, indices, config.training, rng)
    model = LstmClassifier(config.lstm, rng, dtype)
    batches = _batches(indices, config.training.batch_size)
    model.input_scaler.fit(source.tensors(batch, dtype) for batch in batches)

    def loss_fn(batch):
        return categorical_crossentropy(model(source.tensors(batch, dtype)), one_hot(source.labels(batch)))

    curve, initial, optimizer = fit(
        model, loss_fn, indices, config.training.lstm_epochs, config.training, config.optimizer, rng, "lstm",
    )
    return TrainingResult(model, curve, initial, optimizer, rng)


def train_vae(source, config, seed, indices=None):
    """
    Train the STGCN variational autoencoder on unlabeled samples

    Parameters:
    source (DatasetManifest | ArraySource): Samples; labels are never read
    config (PipelineConfig): VAE, optimizer and training sections are used
    seed (int): Seed for initialization, shuffling and posterior noise
    indices (list[int]): Training sample indices, all when None

    Returns:
    TrainingResult: Trained VAE, -ELBO curve and optimizer state
    """
    rng = np.random.default_rng(seed)
    dtype = np.dtype(config.training.dtype)
    indices = _training_indices(source, indices, config.training, rng)
    frames, nodes = source.tensors(indices[:1], dtype).shape[1:3]
    adjacency = build_adjacency_two_skeletons(config.vae.edges, nodes // 2)
    model = StgcnVae(config.vae, frames, adjacency, rng, dtype)

    def loss_fn(batch):
        return model.loss(source.tensors(batch, dtype), rng)

    curve, initial, optimizer = fit(
        model, loss_fn, indices, config.training.vae_epochs, config.training, config.optimizer, rng, "vae",
    )
    model.trained = True
    return TrainingResult(model, curve, initial, optimizer, rng)


def vae_terms(vae, x, rng):
    """Reconstruction and KL terms of -ELBO for one batch, as floats"""
    recons, mu, logvar, _ = vae.forward(x, rng)
    recon = np.mean([reconstruction_nll(r, x).item() for r in recons])
    return {"reconstruction": float(recon), "kl": kl_gaussian(mu, logvar).item()}


def copy_encoder(vae):
    """Independent frozen copy of a VAE's encoder"""
    config = vae.config
    encoder = StgcnEncoder(
        config.channels, vae.adjacency, config.temporal_kernel, np.random.default_rng(0), vae.dtype,
        vae.encoder.pool_groups,
    )
    encoder.load_state_dict(vae.encoder.state_dict())
    return encoder.freeze()


def extract_transfer_classifier(vae, source, config, seed, indices=None):
    """
    Freeze the trained encoder and train only a 9-way softmax head on labeled samples

    Parameters:
    vae (StgcnVae): Trained VAE
    source (DatasetManifest | ArraySource): Labeled samples
    config (PipelineConfig): Optimizer and training sections are used
    seed (int): Seed for head initialization and shuffling
    indices (list[int]): Training sample indices, all when None

    Returns:
    TrainingResult: TransferClassifier with its head loss curve
    """
    if vae is None or not getattr(vae, "trained", False):
        raise MissingCheckpointError("transfer classifier needs a trained VAE (train or load one first)")
    rng = np.random.default_rng(seed)
    dtype = vae.dtype
    indices = _training_indices(source, indices, config.training, rng)
    model = TransferClassifier(copy_encoder(vae), config.lstm.classes, rng, dtype)

    # The encoder output does not change while the head trains
    pooled_cache = {}

    def pooled(batch):
        missing = [i for i in batch if i not in pooled_cache]
        if missing:
            features = model.encoder(source.tensors(missing, dtype)).data
            pooled_cache.update(zip(missing, features))
        return np.stack([pooled_cache[i] for i in batch])

    model.feature_scaler.fit(pooled(batch) for batch in _batches(indices, config.training.batch_size))

    def loss_fn(batch):
        logits = model.head(model.feature_scaler(pooled(batch)))
        return categorical_crossentropy(logits, one_hot(source.labels(batch)))

    curve, initial, optimizer = fit(
        model, loss_fn, indices, config.training.head_epochs, config.training, config.optimizer, rng,
        "transfer head", parameters=model.trainable_parameters(),
    )
    return TrainingResult(model, curve, initial, optimizer, rng)


def predict(model, samples):
    """
    Class probabilities for one sample or a batch

    Parameters:
    model (LstmClassifier | TransferClassifier): Trained classifier
    samples (np.ndarray): T x 20 x 3 or B x T x 20 x 3, scaled to [0, 1]

    Returns:
    np.ndarray: 9 or B x 9 probabilities
    """
    samples = np.asarray(samples)
    single = samples.ndim == 3
    batch = samples[None] if single else samples
    if batch.ndim != 4:
        raise DataError(f"expected T x 20 x 3 or B x T x 20 x 3 samples, got {samples.shape}")
    out = [
        model.probabilities(batch[start:start + PREDICT_BATCH]).data
        for start in range(0, len(batch), PREDICT_BATCH)
    ]
    probabilities = np.concatenate(out) if out else np.zeros((0, NUM_CLASSES))
    return probabilities[0] if single else probabilities


def classify(probabilities):
    """Most probable class; ties go to the lowest class index"""
    return np.argmax(np.asarray(probabilities), axis=-1)


def predict_source(model, source, indices=None, batch_size=PREDICT_BATCH):
    """Probabilities for samples drawn from a dataset, batch by batch"""
    indices = np.arange(len(source)) if indices is None else np.asarray(list(indices), dtype=np.int64)
    out = [predict(model, source.tensors(batch, model.dtype)) for batch in _batches(indices, batch_size)]
    return np.concatenate(out) if out else np.zeros((0, NUM_CLASSES))


def mirror_class(class_index):
    left, right = divmod(int(class_index), NUM_STATES)
    return NUM_STATES * right + left


def swap_diagnostic(model, samples, labels):
    """
    How much probability moves to the mirrored class when the two people are swapped

    Only samples whose two states differ are used. Logged, never asserted.

    Parameters:
    model (LstmClassifier | TransferClassifier): Trained classifier
    samples (np.ndarray): B x T x 20 x 3
    labels (np.ndarray): B class indices

    Returns:
    dict: samples used, mean mirrored-class probability before and after the swap
    """
    labels = np.asarray(labels)
    asymmetric = np.array([mirror_class(c) != c for c in labels], dtype=bool)
    if not asymmetric.any():
        logger.info("Swap diagnostic: no asymmetric samples")
        return {"samples": 0, "mirror_before": None, "mirror_after": None}
    x = np.asarray(samples)[asymmetric]
    mirrors = np.array([mirror_class(c) for c in labels[asymmetric]])
    half = x.shape[2] // 2
    swapped = np.concatenate([x[:, :, half:], x[:, :, :half]], axis=2)
    rows = np.arange(len(x))
    before = float(predict(model, x)[rows, mirrors].mean())
    after = float(predict(model, swapped)[rows, mirrors].mean())
    logger.info(
        f"Swap diagnostic on {len(x)} samples: mirrored-class probability {before:.3f} -> {after:.3f} "
        f"(e.g. {CLASS_NAMES[labels[asymmetric][0]]} -> {CLASS_NAMES[mirrors[0]]})"
    )
    return {"samples": int(len(x)), "mirror_before": before, "mirror_after": after}


def model_checkpoint(model, optimizer=None, rng=None, metadata=None):
    """
    Package a model's state for utils.checkpoint

    Parameters:
    model (LstmClassifier | StgcnVae | TransferClassifier): Model to store
    optimizer (Adam): Optional optimizer state
    rng (np.random.Generator): Optional generator state
    metadata (dict): Free-form fields stored in the header

    Returns:
    Checkpoint: Ready for save_checkpoint
    """
    return Checkpoint(
        kind=model.kind,
        architecture=model.architecture(),
        parameters=model.state_dict(),
        optimizer_state=None if optimizer is None else optimizer.state_dict(),
        rng_state=None if rng is None else rng_state(rng),
        metadata=dict(metadata or {}),
    )


def model_from_checkpoint(checkpoint):
    """
    Rebuild a model from a loaded Checkpoint

    Parameters:
    checkpoint (Checkpoint): Loaded checkpoint

    Returns:
    LstmClassifier | StgcnVae | TransferClassifier: Model with the stored parameters
    """
    arch = checkpoint.architecture
    rng = np.random.default_rng(0)
    if checkpoint.kind == "lstm":
        model = LstmClassifier(LstmClassifierConfig(**arch["config"]), rng, arch["dtype"])
    elif checkpoint.kind == "vae":
        config = VaeConfig(**arch["config"])
        adjacency = build_adjacency_two_skeletons(config.edges, arch["nodes"] // 2)
        model = StgcnVae(config, arch["frames"], adjacency, rng, arch["dtype"])
        model.trained = True
    elif checkpoint.kind == "transfer":
        adjacency = normalized_adjacency([tuple(e) for e in arch["edges"]], arch["nodes"])
        encoder = StgcnEncoder(
            arch["channels"], adjacency, arch["temporal_kernel"], rng, arch["dtype"], arch.get("pool_groups", 1),
        )
        model = TransferClassifier(encoder, arch["classes"], rng, arch["dtype"])
    else:
        raise DataError(f"unknown checkpoint kind {checkpoint.kind!r}")
    model.load_state_dict(checkpoint.parameters)
    return model


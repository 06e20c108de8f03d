from dataclasses import dataclass


@dataclass
class Family:
    CAR = "CAR"
    ICAR = "iCAR"
    PCAR = "pCAR"
    LCAR = "LCAR"
    BYM = "BYM"

    TYPES = [CAR, ICAR, PCAR, LCAR, BYM]
    # families whose alpha must lie in [0, 1)
    WITH_ALPHA = [CAR, PCAR, LCAR]


@dataclass
class ModelKind:
    AGGGP = "aggGP"
    AGGVAE = "aggVAE"

    TYPES = [AGGGP, AGGVAE]


@dataclass
class Activation:
    TANH = "tanh"
    RELU = "relu"

    TYPES = [TANH, RELU]


@dataclass
class PartitionKind:
    RECT = "rect"
    VORONOI = "voronoi"

    TYPES = [RECT, VORONOI]


@dataclass
class Era:
    OLD = "old"
    NEW = "new"

    TYPES = [OLD, NEW]

from enum import Enum


class Primitive(str, Enum):
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    DIV = "div"
    NEG = "neg"
    POW = "pow"
    EXP = "exp"
    LOG = "log"
    TANH = "tanh"
    SIN = "sin"
    COS = "cos"
    SQRT = "sqrt"
    SIGMOID = "sigmoid"
    SOFTPLUS = "softplus"
    ABS_SMOOTH = "abs_smooth"
    POS_POW = "pos_pow"  # (max(x, 0))**a
    SUM = "sum"
    MATVEC = "matvec"


class SampleKind(str, Enum):
    IID_MC = "iid_mc"
    GRID = "grid"
    GAUSS_LEGENDRE = "gauss_legendre"


class Target(str, Enum):
    INTERIOR = "interior"
    BOUNDARY = "boundary"


class OperatorA(str, Enum):
    ELLIPTIC = "elliptic"
    ADVECTION_REACTION = "advection_reaction"
    FRACTIONAL_ADR = "fractional_adr"


class OperatorB(str, Enum):
    DIRICHLET_TRACE = "dirichlet_trace"
    INFLOW_TRACE = "inflow_trace"
    EXTERIOR_IDENTITY = "exterior_identity"


class Norm(str, Enum):
    L2 = "L2"
    H1 = "H1"
    H2 = "H2"
    C2 = "C2"
    HHALF_SURROGATE = "Hhalf_surrogate"
    GRAPH_LP = "graph_Lp"
    HALPHA2_SURROGATE = "Halpha2_surrogate"


class ModelKind(str, Enum):
    MLP = "mlp"
    GAUSSIAN_RBF = "gaussian_rbf"
    ANALYTIC = "analytic"


class Activation(str, Enum):
    TANH = "tanh"
    SIN = "sin"
    SOFTPLUS = "softplus"


class LossForm(str, Enum):
    CONTINUOUS_RM = "continuous_rm"
    DISCRETE_RM = "discrete_rm"
    HP_VRM = "hp_vrm"
    REGULARIZED_RM = "regularized_rm"
    PWCONST_WEAK = "pwconst_weak"


class BasisKind(str, Enum):
    LEGENDRE = "legendre"
    PWCONST = "pwconst"


class Algorithm(str, Enum):
    ADAM = "adam"
    GD = "gd"


class RunStatus(str, Enum):
    OK = "ok"
    STOPPED = "stopped"  # quasi-minimizer window reached
    ABORTED = "aborted"  # non-finite loss or gradient
    FAILED = "failed"

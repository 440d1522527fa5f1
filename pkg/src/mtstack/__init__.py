"""Multi-target regression toolkit with stacked generalisation."""

from .learners import KIND_RF, KIND_SVR_L, KIND_SVR_R, LearnerSpec, RfParams, SvrParams
from .metrics import arrmse, pearson_matrix, rmse, rpd, rpd_band, rpt
from .mtr import (
    MtrMethodSpec,
    MultiTargetModel,
    PredictionMatrix,
    drs_train,
    erc_train,
    filter_relevant,
    load_bundle,
    motc_train,
    mtas_train,
    mtr_predict,
    mtr_train,
    mtsg_train,
    save_bundle,
    sg_train,
    sst_train,
    st_train,
)
from .tabular import (
    Dataset,
    ScalingParams,
    SplitIndices,
    apply_autoscale,
    fit_autoscale,
    invert_autoscale,
    kennard_stone_split,
    load_csv,
)

__version__ = "0.1.0"

__all__ = [
    "KIND_RF", "KIND_SVR_L", "KIND_SVR_R", "LearnerSpec", "RfParams", "SvrParams",
    "arrmse", "pearson_matrix", "rmse", "rpd", "rpd_band", "rpt",
    "MtrMethodSpec", "MultiTargetModel", "PredictionMatrix",
    "drs_train", "erc_train", "filter_relevant", "load_bundle", "motc_train",
    "mtas_train", "mtr_predict", "mtr_train", "mtsg_train", "save_bundle",
    "sg_train", "sst_train", "st_train",
    "Dataset", "ScalingParams", "SplitIndices", "apply_autoscale",
    "fit_autoscale", "invert_autoscale", "kennard_stone_split", "load_csv",
    "__version__",
]

"""
类增量训练流程

phase 0 在基础类上从头训练；之后每个阶段冻结上一阶段的学习器作为教师，扩展分类器，
只用本阶段的数据按策略训练，再在到目前为止学过的全部类上评估。
"""
import logging
import threading
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

from django.conf import settings

from audiotasks.datasets import Dataset
from audiotasks.phases import PhaseDataset, PhasePlan, at_view, eval_view, labels_histogram, phase_view
from audiotasks.samplers import BalancedBatchSampler
from evaluation.metrics import forgetting, group_f1, macro_f1, mean_average_precision
from evaluation.reports import PhaseReport, RunReport
from gradcore.functions import sigmoid
from gradcore.optim import SGDMomentum, cosine_lr
from learners.losses import DistillConfig, LossBreakdown, adaptive_lambda, total_loss
from learners.network import (
    ClassifierParams, FrozenTeacher, LearnerState, ModelConfig, build_learner, classify, expand_classifier,
    extract, freeze, weight_norms
)
from utils.exceptions import (
    CILError, ConfigurationError, DegenerateInputError, DimensionMismatch, EmptyViewError, NumericError
)
from .strategies import Strategy


logger = logging.getLogger('cil.train')

SAMPLER_STREAM = 5
EXPAND_STREAM = 6
MODEL_STREAM = 7


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 120
    batch_size: int = 32
    momentum: float = 0.9
    lr_initial: float = 0.01
    lr_incremental: float = 0.001
    distill: DistillConfig = field(default_factory=DistillConfig)
    threshold: float = 0.5
    dedupe: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError(f'epochs must be >= 0, got {self.epochs}', module='trainer')
        if self.batch_size < 1:
            raise ConfigurationError(f'batch_size must be >= 1, got {self.batch_size}', module='trainer')
        if not 0 <= self.momentum < 1:
            raise ConfigurationError(f'momentum must be in [0, 1), got {self.momentum}', module='trainer')
        if not (self.lr_initial > 0 and self.lr_incremental > 0):
            raise ConfigurationError(f'learning rates must be positive, got ({self.lr_initial}, '
                                     f'{self.lr_incremental})', module='trainer')
        if not 0 < self.threshold < 1:
            raise ConfigurationError(f'threshold must be in (0, 1), got {self.threshold}', module='trainer')
        if self.seed < 0:
            raise ConfigurationError(f'seed must be >= 0, got {self.seed}', module='trainer')

    @classmethod
    def from_settings(cls, **overrides):
        """
        settings.CIL_TRAIN的值作为默认值；overrides中值为None的项忽略，
        omega/delta/eps会合并到distill中
        """
        conf = settings.CIL_TRAIN
        overrides = {k: v for k, v in overrides.items() if v is not None}
        distill = DistillConfig(
            delta=overrides.pop('delta', conf['DELTA']),
            omega=overrides.pop('omega', conf['OMEGA']),
            eps=overrides.pop('eps', conf['EPS']),
        )
        kwargs = {
            'epochs': conf['EPOCHS'],
            'batch_size': conf['BATCH_SIZE'],
            'momentum': conf['MOMENTUM'],
            'lr_initial': conf['LR_INITIAL'],
            'lr_incremental': conf['LR_INCREMENTAL'],
            'threshold': conf['THRESHOLD'],
            'dedupe': conf['DEDUPE'],
            'distill': distill,
        }
        kwargs.update(overrides)
        return cls(**kwargs)

    def lr_for_phase(self, phase: int) -> float:
        return self.lr_initial if phase == 0 else self.lr_incremental


@dataclass
class BatchRecord:
    phase: int
    epoch: int
    batch: int
    lr: float
    loss: LossBreakdown


class PhaseTrainer:
    """
    一个阶段的优化循环

    每个epoch先按cosine_lr取学习率，再遍历类均衡的batch；动量在每次train()开始时清零。
    history保存每个batch的损失分解。
    """
    def __init__(self, cfg: TrainConfig, strategy: Strategy):
        self.cfg = cfg
        self.strategy = Strategy.parse(strategy)
        self.history: List[BatchRecord] = []

    def epoch_losses(self) -> List[float]:
        """
        每个epoch的平均总损失
        """
        totals = {}
        for r in self.history:
            totals.setdefault(r.epoch, []).append(r.loss.total)

        return [sum(v) / len(v) for _, v in sorted(totals.items())]

    def _check_inputs(self, learner: LearnerState, teacher: Optional[FrozenTeacher], pd: PhaseDataset):
        if learner.class_count != len(pd.columns):
            raise DimensionMismatch(f'learner has {learner.class_count} classes, phase view encodes '
                                    f'{len(pd.columns)}', module='trainer', phase=pd.phase)

        flags = self.strategy.flags
        needs_teacher = learner.phase_index >= 1 and learner.old_class_count > 0 and flags.distills
        if needs_teacher and teacher is None:
            raise ConfigurationError(f'{self.strategy.value} needs a frozen teacher', module='trainer',
                                     phase=pd.phase)

    def train(self, learner: LearnerState, teacher: Optional[FrozenTeacher], pd: PhaseDataset,
              lr0: float = None) -> LearnerState:
        """
        :param learner: 分类器已扩展到本阶段的类，不会被修改
        :param teacher: 上一阶段冻结的学习器
        :param pd: 本阶段的训练视图
        :param lr0: 余弦退火的初始学习率，默认按阶段取lr_initial或lr_incremental
        :return:
            训练后的新LearnerState
        :raises: NumericError, ConfigurationError
        :raises: DegenerateInputError   # 特征蒸馏遇到范数为0的特征，带出错的epoch和batch
        """
        self._check_inputs(learner, teacher, pd)
        learner = learner.copy()
        if self.cfg.epochs == 0:
            return learner

        lr0 = lr0 if lr0 is not None else self.cfg.lr_for_phase(pd.phase)
        flags = self.strategy.flags
        optimizer = SGDMomentum(momentum=self.cfg.momentum)
        sampler = BalancedBatchSampler(pd, self.cfg.batch_size, seed=[self.cfg.seed, pd.phase, SAMPLER_STREAM])
        row_masks = learner.row_masks()
        logger.info(f'{self.strategy.value} phase {pd.phase}: {len(pd)} clips, {len(pd.target_classes)} target '
                    f'classes, {sampler.batches_per_epoch} batches per epoch, lr0={lr0:g}')

        for epoch in range(self.cfg.epochs):
            lr = cosine_lr(epoch, self.cfg.epochs, lr0)
            for batch, idx in enumerate(sampler.epoch()):
                try:
                    breakdown, grads = total_loss(learner, teacher, pd.x[idx], pd.y[idx], self.cfg.distill, flags)
                except DegenerateInputError as exc:
                    raise DegenerateInputError(exc.message, module=exc.module or 'trainer', phase=pd.phase,
                                               extend_msg=f'epoch={epoch}, batch={batch}')
                component = breakdown.non_finite_component()
                if component:
                    raise NumericError('loss is not finite', epoch=epoch, batch=batch, component=component,
                                       module='trainer', phase=pd.phase)

                self.history.append(BatchRecord(phase=pd.phase, epoch=epoch, batch=batch, lr=lr, loss=breakdown))
                try:
                    params = optimizer.step(learner.named_parameters(), grads, lr, row_masks=row_masks)
                except NumericError as exc:
                    raise NumericError(exc.message, epoch=epoch, batch=batch, component='update',
                                       module='trainer', phase=pd.phase)
                learner.load_parameters(params)

            if logger.isEnabledFor(logging.DEBUG):
                last = self.history[-1].loss
                logger.debug(f'{self.strategy.value} phase {pd.phase} epoch {epoch + 1}/{self.cfg.epochs} '
                             f'lr={lr:.6g} bce={last.bce:.6f} od={last.od:.6f} fd={last.fd:.6f} '
                             f'lambda={last.lam:.4f} total={last.total:.6f}')

        return learner


def train_phase(learner: LearnerState, teacher: Optional[FrozenTeacher], pd: PhaseDataset, cfg: TrainConfig,
                strategy, lr0: float = None) -> LearnerState:
    return PhaseTrainer(cfg, strategy).train(learner, teacher, pd, lr0=lr0)


def prepare_incremental_learner(learner: LearnerState, n_new: int, phase: int, init_scale: float, seed,
                                freeze_old: bool = False) -> LearnerState:
    """
    复制学习器并追加n_new个分类单元；freeze_old为True时旧类单元标记为冻结
    """
    old = learner.class_count
    expanded = expand_classifier(learner.classifier, n_new, init_scale=init_scale, seed=seed)
    if freeze_old:
        mask = expanded.frozen_mask.copy()
        mask[:old] = True
        expanded = ClassifierParams(weight=expanded.weight, bias=expanded.bias, frozen_mask=mask)

    return LearnerState(extractor=learner.copy().extractor, classifier=expanded, phase_index=phase,
                        old_class_count=old, new_class_count=n_new)


def measure_lambda_schedule(plan: PhasePlan, omega: float) -> List[float]:
    """
    每个增量阶段使用的λ

    :raises: ConfigurationError  # plan少于2个阶段
    """
    if plan.n_phases < 2:
        raise ConfigurationError('lambda schedule needs at least 2 phases', module='trainer')

    return [adaptive_lambda(len(plan.classes_so_far(i)), len(plan.classes(i)), omega)
            for i in range(1, plan.n_phases)]


def evaluate_phase(learner: LearnerState, eval_dataset: Dataset, plan: PhasePlan, phase: int,
                   threshold: float = 0.5, strategy=Strategy.IODFD) -> PhaseReport:
    """
    在classes_so_far(phase)上评估，分数为sigmoid概率

    :raises: EmptyViewError, DimensionMismatch
    """
    strategy = Strategy.parse(strategy)
    view = eval_view(eval_dataset, plan, phase)
    if not len(view):
        raise EmptyViewError('evaluation view has no clips', module='trainer', phase=phase)
    if learner.class_count != len(view.columns):
        raise DimensionMismatch(f'learner has {learner.class_count} classes, evaluation needs '
                                f'{len(view.columns)}', module='trainer', phase=phase)

    scores = sigmoid(classify(learner.classifier, extract(learner.extractor, view.x)))
    per_class_f1, macro = macro_f1(scores, view.y, threshold)
    per_class_ap, m = mean_average_precision(scores, view.y)

    old_f1 = None
    new_f1 = macro
    if phase >= 1:
        old_f1 = group_f1(view.columns, per_class_f1, plan.classes_so_far(phase - 1))
        new_f1 = group_f1(view.columns, per_class_f1, plan.classes(phase))

    return PhaseReport(
        phase=phase, strategy=strategy.value, classes=view.columns, per_class_f1=per_class_f1, macro_f1=macro,
        per_class_ap=per_class_ap, map=m, weight_norms=weight_norms(learner.classifier),
        labels_histogram=dict(labels_histogram(view.examples, view.columns)), old_f1=old_f1, new_f1=new_f1,
        incremental=strategy.incremental,
    )


def train_base_learner(dataset: Dataset, plan: PhasePlan, cfg: TrainConfig, model_cfg: ModelConfig = None,
                       strategy=Strategy.FT) -> LearnerState:
    """
    phase 0 的学习器，phase 0 不涉及蒸馏和冻结，各策略可以共用
    """
    model_cfg = model_cfg or ModelConfig.from_settings(dataset.dim)
    learner = build_learner(model_cfg, len(plan.classes(0)), seed=[cfg.seed, MODEL_STREAM, 0])
    return train_phase(learner, None, phase_view(dataset, plan, 0), cfg, strategy)


class CILRunner:
    """
    按阶段顺序运行一个策略；run()之后learner为最后一个阶段的学习器，report为各阶段的评估结果
    """
    def __init__(self, dataset: Dataset, plan: PhasePlan, strategy, cfg: TrainConfig,
                 model_cfg: ModelConfig = None, eval_dataset: Dataset = None):
        self.dataset = dataset
        self.eval_dataset = eval_dataset if eval_dataset is not None else dataset
        self.plan = plan
        self.strategy = Strategy.parse(strategy)
        self.cfg = cfg
        self.model_cfg = model_cfg or ModelConfig.from_settings(dataset.dim)
        self.learner: Optional[LearnerState] = None
        self.report: Optional[RunReport] = None
        self.trainers: List[PhaseTrainer] = []
        self.views: List[PhaseDataset] = []

    def _train(self, learner, teacher, pd, lr0=None) -> LearnerState:
        trainer = PhaseTrainer(self.cfg, self.strategy)
        self.trainers.append(trainer)
        return trainer.train(learner, teacher, pd, lr0=lr0)

    def _train_view(self, phase: int) -> PhaseDataset:
        """
        本阶段的训练视图；cfg.dedupe为True时去掉之前阶段视图中的clip

        :raises: EmptyViewError  # 去重后有目标类没有clip
        """
        used = frozenset(cid for view in self.views for cid in view.clip_ids) if self.cfg.dedupe else frozenset()
        view = phase_view(self.dataset, self.plan, phase, exclude_ids=used)
        self.views.append(view)
        return view

    def _base_learner(self, base_learner: Optional[LearnerState]) -> LearnerState:
        n_base = len(self.plan.classes(0))
        view = self._train_view(0)
        if base_learner is not None and self.strategy.shares_base_learner:
            if base_learner.class_count != n_base or base_learner.phase_index != 0:
                raise ConfigurationError(f'shared base learner has {base_learner.class_count} classes at phase '
                                         f'{base_learner.phase_index}, plan starts with {n_base}', module='trainer')
            return base_learner.copy()

        learner = build_learner(self.model_cfg, n_base, seed=[self.cfg.seed, MODEL_STREAM, 0])
        return self._train(learner, None, view)

    def _scratch_phase(self, phase: int) -> LearnerState:
        learner = build_learner(self.model_cfg, len(self.plan.classes_so_far(phase)),
                                seed=[self.cfg.seed, MODEL_STREAM, phase])
        learner.phase_index = phase
        return self._train(learner, None, at_view(self.dataset, self.plan, phase), lr0=self.cfg.lr_initial)

    def _incremental_phase(self, learner: LearnerState, phase: int) -> LearnerState:
        flags = self.strategy.flags
        teacher = freeze(learner) if flags.distills else None
        student = prepare_incremental_learner(
            learner, len(self.plan.classes(phase)), phase, self.model_cfg.init_scale,
            seed=[self.cfg.seed, EXPAND_STREAM, phase], freeze_old=flags.freeze_old_classifier)
        return self._train(student, teacher, self._train_view(phase))

    def evaluate(self, learner: LearnerState, phase: int) -> PhaseReport:
        return evaluate_phase(learner, self.eval_dataset, self.plan, phase, self.cfg.threshold, self.strategy)

    def run(self, base_learner: LearnerState = None) -> RunReport:
        """
        :param base_learner: 共用的phase 0学习器，AT不使用
        :raises: CILError  # 带出错的阶段编号
        """
        self.plan.check_dataset(self.dataset)
        self.plan.check_dataset(self.eval_dataset)
        report = RunReport(strategy=self.strategy.value)
        self.views = []
        flags = self.strategy.flags
        learner = None
        for phase in range(self.plan.n_phases):
            try:
                if phase == 0:
                    learner = self._base_learner(base_learner)
                elif flags.retrain_from_scratch:
                    learner = self._scratch_phase(phase)
                else:
                    learner = self._incremental_phase(learner, phase)

                phase_report = self.evaluate(learner, phase)
                if phase >= 1:
                    phase_report.fr = forgetting(report.phases[0], phase_report, self.plan.classes(0))
                    if flags.use_od:
                        phase_report.lam = adaptive_lambda(learner.class_count, learner.new_class_count,
                                                           self.cfg.distill.omega)
            except CILError as exc:
                raise exc.at(module='trainer', phase=phase)

            logger.info(f'{self.strategy.value} phase {phase}: macro F1={phase_report.macro_f1:.4f} '
                        f'mAP={phase_report.map:.4f} Fr={phase_report.fr}')
            report.phases.append(phase_report)

        self.learner = learner
        self.report = report
        return report


def run_cil(dataset: Dataset, plan: PhasePlan, strategy, cfg: TrainConfig, model_cfg: ModelConfig = None,
            eval_dataset: Dataset = None, base_learner: LearnerState = None) -> RunReport:
    return CILRunner(dataset, plan, strategy, cfg, model_cfg=model_cfg, eval_dataset=eval_dataset).run(
        base_learner=base_learner)


def run_strategies(dataset: Dataset, plan: PhasePlan, strategies: Sequence, cfg: TrainConfig,
                   model_cfg: ModelConfig = None, eval_dataset: Dataset = None,
                   max_threads: int = 1) -> List[CILRunner]:
    """
    运行多个策略，增量策略共用同一个phase 0学习器

    每个策略一个线程，最多max_threads个同时运行；返回的runner按strategies的顺序排列

    :raises: CILError  # 按strategies顺序第一个失败的策略的错误；非CILError的异常包装为CILError
    """
    if max_threads < 1:
        raise ConfigurationError(f'max_threads must be >= 1, got {max_threads}', module='trainer')

    model_cfg = model_cfg or ModelConfig.from_settings(dataset.dim)
    base = train_base_learner(dataset, plan, cfg, model_cfg)
    runners = [CILRunner(dataset, plan, s, cfg, model_cfg=model_cfg, eval_dataset=eval_dataset) for s in strategies]
    pool_sem = threading.Semaphore(max_threads)     # 最多同时运行多少个策略
    failures = {}

    def work(index, runner):
        try:
            runner.run(base_learner=base)
        except CILError as exc:
            failures[index] = exc
        except Exception as exc:
            logger.exception(f'strategy {runner.strategy.value} crashed')
            failures[index] = CILError(f'strategy {runner.strategy.value} crashed', module='trainer',
                                       extend_msg=f'{type(exc).__name__}: {exc}')
        finally:
            pool_sem.release()

    workers = []
    for index, runner in enumerate(runners):
        pool_sem.acquire()      # 正在运行的线程数量达到上限会阻塞等待
        worker = threading.Thread(target=work, kwargs={'index': index, 'runner': runner})
        worker.start()
        workers.append(worker)

    for worker in workers:
        worker.join()

    for index in range(len(runners)):
        if index in failures:
            raise failures[index]

    return runners

from enum import Enum

from learners.losses import StrategyFlags
from utils.exceptions import ConfigurationError


class Strategy(Enum):
    """
    FT: 在新类上微调全部参数
    FE: 冻结特征提取器和旧类分类单元，只训练新类分类单元
    AT: 每个阶段用全部已学类的数据从头训练，不是增量方法
    INDL_ONLY / OD_ONLY / IOD / IFD / IODFD: 独立学习(IndL)、输出蒸馏(OD)、特征蒸馏(FD)的组合
    """
    FT = 'FT'
    FE = 'FE'
    AT = 'AT'
    INDL_ONLY = 'INDL_ONLY'
    OD_ONLY = 'OD_ONLY'
    IOD = 'IOD'
    IFD = 'IFD'
    IODFD = 'IODFD'

    @property
    def flags(self) -> StrategyFlags:
        return STRATEGY_FLAGS[self]

    @property
    def incremental(self) -> bool:
        return not self.flags.retrain_from_scratch

    @property
    def shares_base_learner(self) -> bool:
        """
        增量方法共用同一个phase 0学习器
        """
        return self.incremental

    @classmethod
    def parse(cls, value) -> 'Strategy':
        """
        :raises: ConfigurationError
        """
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ConfigurationError(f'unknown strategy "{value}", choices: {[s.value for s in cls]}', module='trainer')


#                                     indl   od     fd     freeze_ext  freeze_old  scratch
STRATEGY_FLAGS = {
    Strategy.FT: StrategyFlags(False, False, False, False, False, False),
    Strategy.FE: StrategyFlags(True, False, False, True, True, False),
    Strategy.AT: StrategyFlags(False, False, False, False, False, True),
    Strategy.INDL_ONLY: StrategyFlags(True, False, False, False, False, False),
    Strategy.OD_ONLY: StrategyFlags(False, True, False, False, False, False),
    Strategy.IOD: StrategyFlags(True, True, False, False, False, False),
    Strategy.IFD: StrategyFlags(True, False, True, False, False, False),
    Strategy.IODFD: StrategyFlags(True, True, True, False, False, False),
}

STRATEGY_CHOICES = [s.value for s in Strategy]

class CILError(Exception):
    default_message = 'We encountered an internal error.'
    default_code = 'InternalError'
    default_exit_code = 2

    def __init__(self, message: str = '', code: str = '', module: str = '', phase=None, extend_msg=''):
        """
        :param message: 错误描述
        :param code: 错误代码
        :param module: 出错的模块名，如 data, trainer
        :param phase: 出错时所在的阶段编号
        :param extend_msg: 扩展错误描述的信息，追加到message后面
        """
        self.message = message if message else self.default_message
        self.code = code if code else self.default_code
        self.module = module
        self.phase = phase
        self.exit_code = self.default_exit_code
        if extend_msg:
            self.message += ': ' + extend_msg

        super().__init__(self.message)

    def __repr__(self):
        return f'{type(self).__name__}(message={self.message}, code={self.code}, module={self.module}, ' \
               f'phase={self.phase})'

    def __str__(self):
        prefix = ''
        if self.module:
            prefix += f'[{self.module}] '
        if self.phase is not None:
            prefix += f'phase {self.phase}: '

        return prefix + self.message

    def err_data(self):
        return {
            'Code': self.code,
            'Message': self.message,
            'Module': self.module,
            'Phase': self.phase
        }

    def at(self, module: str = '', phase=None):
        """
        补充出错位置后返回自身，便于向上传播时 raise exc.at(...)
        """
        if module and not self.module:
            self.module = module
        if phase is not None and self.phase is None:
            self.phase = phase

        return self


class ConfigurationError(CILError):
    default_message = 'Invalid configuration.'
    default_code = 'ConfigurationError'
    default_exit_code = 1


class DimensionMismatch(ConfigurationError):
    default_message = 'Dimensions do not agree.'
    default_code = 'DimensionMismatch'


class RangeError(ConfigurationError):
    default_message = 'Value out of range.'
    default_code = 'RangeError'


class EmptyViewError(ConfigurationError):
    default_message = 'The phase view contains no clips.'
    default_code = 'EmptyView'


class DatasetParseError(CILError):
    default_message = 'Malformed dataset file.'
    default_code = 'DatasetParseError'
    default_exit_code = 1

    def __init__(self, message: str = '', line_number: int = None, **kwargs):
        self.line_number = line_number
        if line_number is not None:
            message = f'line {line_number}: {message or self.default_message}'

        super().__init__(message=message, **kwargs)


class DegenerateInputError(CILError):
    default_message = 'Degenerate input.'
    default_code = 'DegenerateInput'


class NumericError(CILError):
    default_message = 'Non-finite value encountered.'
    default_code = 'NumericError'

    def __init__(self, message: str = '', epoch: int = None, batch: int = None, component: str = '', **kwargs):
        self.epoch = epoch
        self.batch = batch
        self.component = component
        details = []
        if epoch is not None:
            details.append(f'epoch={epoch}')
        if batch is not None:
            details.append(f'batch={batch}')
        if component:
            details.append(f'component={component}')
        if details:
            kwargs['extend_msg'] = ', '.join(details)

        super().__init__(message=message, **kwargs)


class GradCheckError(CILError):
    default_message = 'Gradient check failed.'
    default_code = 'GradCheckError'

    def __init__(self, message: str = '', coordinate: int = None, **kwargs):
        self.coordinate = coordinate
        if coordinate is not None:
            kwargs['extend_msg'] = f'coordinate {coordinate}'

        super().__init__(message=message, **kwargs)

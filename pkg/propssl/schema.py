from typing import Callable

import jsonschema

from .exceptions import ValidationError


def get_jsonschema_validator(schema: dict) -> Callable[[object], None]:
    """Return validator function for schema.

    Example:

    >>> schema = {"type": "object", "properties": {"gamma": {"type": "number", "minimum": 1}}}  # noqa
    >>> validator = get_jsonschema_validator(schema)
    >>> validator({"gamma": 0.5})
    Traceback (most recent call last):
        ...
    propssl.exceptions.ValidationError: 0.5 is less than the minimum of 1 in $gamma

    >>> validator({"gamma": 10})

    """
    validator_cls = jsonschema.validators.validator_for(schema)
    # check if schema is valid
    try:
        validator_cls.check_schema(schema)
    except jsonschema.exceptions.SchemaError as exc:
        raise ValidationError(exc.message)
    validator = validator_cls(schema)

    def validator_function(instance):
        errors = []
        found = validator.iter_errors(instance)
        for err in sorted(found, key=lambda e: [str(p) for p in e.path]):
            # path in data structure where error occurs
            path = "$" + "/".join(str(x) for x in err.absolute_path)
            errors.append("%s in %s" % (err.message, path))
        if errors:
            raise ValidationError("\n".join(errors))

    return validator_function

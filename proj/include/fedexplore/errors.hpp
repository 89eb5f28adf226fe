#pragma once

#include <stdexcept>
#include <string>

namespace fedexplore {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define FEDEXPLORE_DEFINE_ERROR(Name)        \
    class Name : public Error {              \
    public:                                  \
        using Error::Error;                  \
    }

// nn
FEDEXPLORE_DEFINE_ERROR(DescriptorError);
FEDEXPLORE_DEFINE_ERROR(InputShapeError);
FEDEXPLORE_DEFINE_ERROR(LabelRangeError);
FEDEXPLORE_DEFINE_ERROR(LayoutError);

// data
FEDEXPLORE_DEFINE_ERROR(InsufficientDataError);
FEDEXPLORE_DEFINE_ERROR(FormatError);
FEDEXPLORE_DEFINE_ERROR(ConsistencyError);

// model pool
FEDEXPLORE_DEFINE_ERROR(PoolExhaustedError);

// federated rounds
FEDEXPLORE_DEFINE_ERROR(ClientEmptyError);
FEDEXPLORE_DEFINE_ERROR(NoUpdatesError);

// detection
FEDEXPLORE_DEFINE_ERROR(UndefinedSimilarityError);
FEDEXPLORE_DEFINE_ERROR(ShapeError);
FEDEXPLORE_DEFINE_ERROR(RankUndefinedError);

// orchestration / configuration
FEDEXPLORE_DEFINE_ERROR(BudgetUndefinedError);
FEDEXPLORE_DEFINE_ERROR(ConfigError);
FEDEXPLORE_DEFINE_ERROR(ParseError);
FEDEXPLORE_DEFINE_ERROR(ValidationError);
FEDEXPLORE_DEFINE_ERROR(IoError);

#undef FEDEXPLORE_DEFINE_ERROR

}  // namespace fedexplore

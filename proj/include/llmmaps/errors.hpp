#pragma once

#include <stdexcept>
#include <string>

namespace llmmaps {

// Root of every failure raised by the library. `kind()` is a stable short
// name used in reports and CLI diagnostics.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define LLMMAPS_DEFINE_ERROR(Name, Base)                                   \
  class Name : public Base {                                               \
   public:                                                                 \
    explicit Name(const std::string& what) : Base(#Name, what) {}          \
                                                                           \
   protected:                                                              \
    Name(std::string kind, const std::string& what)                        \
        : Base(std::move(kind), what) {}                                   \
  };

// qa_core / ingest
LLMMAPS_DEFINE_ERROR(ParseError, Error)
LLMMAPS_DEFINE_ERROR(MappingError, Error)
LLMMAPS_DEFINE_ERROR(ValidationError, Error)

// llm_gateway
LLMMAPS_DEFINE_ERROR(GatewayError, Error)
LLMMAPS_DEFINE_ERROR(ReplayMissError, GatewayError)
LLMMAPS_DEFINE_ERROR(BudgetError, Error)
LLMMAPS_DEFINE_ERROR(UnparseableRatingError, Error)
LLMMAPS_DEFINE_ERROR(UnparseableLevelError, Error)

// hierarchy
LLMMAPS_DEFINE_ERROR(StructureError, Error)
LLMMAPS_DEFINE_ERROR(EmptyHierarchyError, Error)
LLMMAPS_DEFINE_ERROR(UnknownTargetError, Error)
LLMMAPS_DEFINE_ERROR(InvariantError, Error)

// metrics
LLMMAPS_DEFINE_ERROR(AnswerExtractionError, Error)
LLMMAPS_DEFINE_ERROR(NoClassifiedQuestionsError, Error)

// layout / bluenoise / render
LLMMAPS_DEFINE_ERROR(OverflowError, Error)
LLMMAPS_DEFINE_ERROR(DegenerateRegionError, Error)
LLMMAPS_DEFINE_ERROR(CapacityError, Error)
LLMMAPS_DEFINE_ERROR(ConsistencyError, Error)

#undef LLMMAPS_DEFINE_ERROR

}  // namespace llmmaps
